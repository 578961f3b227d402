//! Lowering of a discretized mixed-precision network into single-precision
//! sub-layers.
//!
//! Filters of each layer are reordered so that channels sharing a weight
//! bit-width are contiguous (ascending bit-width, stable within a group), the
//! next conv/fc layer's input channels are permuted to match, and every layer
//! is split into one sub-layer per bit-width present. The concatenation of
//! the sub-layer outputs is the original layer output.
//!
//! A layer is left in its original order when its output reaches an `add`
//! layer before the next conv/fc, or when it is the last quantized layer; its
//! groups are then recorded as (possibly non-contiguous) index lists.
//!
//! [`reference_forward`] and [`LoweredModel::forward`] evaluate every dot
//! product with a correctly rounded sum, so results do not depend on the order
//! of the input channels.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::error::{Error, Result};
use crate::gates::{LayerAssignment, LinearKind, PrecisionAssignment};
use crate::kernels::{pool_forward, ConvDims, PoolKind};
use crate::model::{Architecture, LayerSpec, Model};
use crate::quant::{dequantize_channel, pact_act_fakequant, quantize_weight_codes, weight_fakequant_channels};
use crate::tensor::Tensor;

/// New channel order of one quantized layer: position `k` holds old channel `perm[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPermutation {
    /// Index among the quantized layers.
    pub layer: usize,
    pub perm: Vec<usize>,
}

impl ChannelPermutation {
    pub fn new(layer: usize, perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Config(format!("layer {layer}: {perm:?} is not a permutation")));
            }
        }
        Ok(Self { layer, perm })
    }

    pub fn identity(layer: usize, n: usize) -> Self {
        Self {
            layer,
            perm: (0..n).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
    }
}

/// Stable ascending sort of a layer's channels by weight bit-width.
pub fn plan_permutation(assignment: &PrecisionAssignment, layer: usize) -> Result<ChannelPermutation> {
    let bits = &assignment
        .layers
        .get(layer)
        .ok_or_else(|| Error::Config(format!("assignment has no layer {layer}")))?
        .weight_bits;
    let mut perm: Vec<usize> = (0..bits.len()).collect();
    perm.sort_by_key(|&i| bits[i]);
    Ok(ChannelPermutation { layer, perm })
}

/// A layer whose filters were left in place.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub layer: usize,
    pub reason: String,
}

struct Consumer {
    quant: usize,
    /// Flattened features per channel when the consumer is an fc layer.
    per_channel: usize,
}

fn arch_to_quant(arch: &Architecture) -> Vec<Option<usize>> {
    let mut q = 0;
    arch.layers
        .iter()
        .map(|l| {
            l.is_quantized().then(|| {
                q += 1;
                q - 1
            })
        })
        .collect()
}

/// The single conv/fc layer reading the output of arch layer `i`, if any.
fn consumer_of(arch: &Architecture, i: usize) -> std::result::Result<Consumer, String> {
    let shapes = arch.infer_shapes().map_err(|e| e.to_string())?;
    let to_quant = arch_to_quant(arch);
    for j in i + 1..arch.layers.len() {
        match &arch.layers[j] {
            LayerSpec::Conv2d { .. } | LayerSpec::Fc { .. } => {
                if arch.layers[j + 1..]
                    .iter()
                    .any(|l| matches!(l, LayerSpec::Add { from } if (i..j).contains(from)))
                {
                    return Err("output is reused by a residual add".into());
                }
                // channel blocks are H*W wide once a feature map is flattened
                let per_channel = (i..j)
                    .rev()
                    .map(|k| &shapes[k])
                    .find(|s| s.len() == 3)
                    .map_or(1, |s| s[1] * s[2]);
                return Ok(Consumer {
                    quant: to_quant[j].expect("quantized"),
                    per_channel,
                });
            }
            LayerSpec::Add { .. } => return Err("output feeds a residual add".into()),
            LayerSpec::Relu | LayerSpec::AvgPool { .. } | LayerSpec::MaxPool { .. } | LayerSpec::Flatten => {}
        }
    }
    Err("last quantized layer".into())
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(t.len());
    for &p in perm {
        data.extend_from_slice(t.row(p));
    }
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// Permutes the input axis of a consumer weight; each input channel spans
/// `block` consecutive entries of a row (spatial taps or flattened features).
fn permute_inputs(w: &Tensor, perm: &[usize], block: usize) -> Tensor {
    let len = w.row_len();
    let mut data = Vec::with_capacity(w.len());
    for r in 0..w.shape()[0] {
        let row = w.row(r);
        for &p in perm {
            data.extend_from_slice(&row[p * block..(p + 1) * block]);
        }
        debug_assert_eq!(data.len(), (r + 1) * len);
    }
    Tensor::new(w.shape().to_vec(), data).expect("same shape")
}

/// Reorders producer filters and consumer input channels.
///
/// Layers whose output has no unique conv/fc consumer are left unchanged and
/// reported. Returns the reordered model, the matching assignment and the
/// skip report.
pub fn apply_permutation(
    model: &Model,
    assignment: &PrecisionAssignment,
    perms: &[ChannelPermutation],
) -> Result<(Model, PrecisionAssignment, Vec<SkipEntry>)> {
    let mut out = model.clone();
    let mut asg = assignment.clone();
    let mut skipped = Vec::new();
    let quant = model.arch.quant_layers();
    if asg.layers.len() != quant.len() {
        return Err(Error::Config(format!(
            "assignment has {} layers, model has {}",
            asg.layers.len(),
            quant.len()
        )));
    }
    for p in perms {
        let c_out = out
            .params
            .layers
            .get(p.layer)
            .ok_or_else(|| Error::Config(format!("no quantized layer {}", p.layer)))?
            .weight
            .shape()[0];
        ChannelPermutation::new(p.layer, p.perm.clone())?;
        if p.perm.len() != c_out {
            return Err(Error::Config(format!(
                "layer {}: permutation of {} for {c_out} channels",
                p.layer,
                p.perm.len()
            )));
        }
        let consumer = match consumer_of(&model.arch, quant[p.layer]) {
            Ok(c) => c,
            Err(reason) => {
                skipped.push(SkipEntry { layer: p.layer, reason });
                continue;
            }
        };
        let prod = &mut out.params.layers[p.layer];
        prod.weight = permute_rows(&prod.weight, &p.perm);
        if let Some(b) = &prod.bias {
            prod.bias = Some(permute_rows(b, &p.perm));
        }
        if let Some(g) = &prod.gamma {
            if g.shape()[0] == c_out && c_out > 1 {
                prod.gamma = Some(permute_rows(g, &p.perm));
            }
        }
        let bits = &mut asg.layers[p.layer].weight_bits;
        *bits = p.perm.iter().map(|&k| bits[k]).collect();
        let cons = &mut out.params.layers[consumer.quant];
        let block = match cons.weight.ndim() {
            4 => cons.weight.shape()[2] * cons.weight.shape()[3],
            _ => consumer.per_channel,
        };
        cons.weight = permute_inputs(&cons.weight, &p.perm, block);
    }
    Ok((out, asg, skipped))
}

/// One single-precision slice of a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubLayer {
    pub weight_bits: u8,
    /// Output channel positions covered, in increasing order.
    pub channels: Vec<usize>,
    /// Row-major codes, one byte per weight.
    pub codes: Vec<u8>,
    /// Symmetric range of each covered channel.
    pub ranges: Vec<f64>,
}

impl SubLayer {
    pub fn is_contiguous(&self) -> bool {
        self.channels.windows(2).all(|w| w[1] == w[0] + 1)
    }
}

/// Splits a layer into one sub-layer per weight bit-width, in ascending order.
pub fn split_layer(weight: &Tensor, weight_bits: &[u8]) -> Result<Vec<SubLayer>> {
    if weight.shape().first() != Some(&weight_bits.len()) {
        return Err(Error::shape(
            "split_layer",
            format!("{} bit-widths for weight {:?}", weight_bits.len(), weight.shape()),
        ));
    }
    let mut groups: Vec<u8> = weight_bits.to_vec();
    groups.sort_unstable();
    groups.dedup();
    let mut subs = Vec::with_capacity(groups.len());
    for b in groups {
        let channels: Vec<usize> = (0..weight_bits.len()).filter(|&i| weight_bits[i] == b).collect();
        let mut shape = weight.shape().to_vec();
        shape[0] = channels.len();
        let rows = Tensor::new(shape, channels.iter().flat_map(|&i| weight.row(i).to_vec()).collect())?;
        let (codes, ranges) = quantize_weight_codes(&rows, &vec![b; channels.len()])?;
        subs.push(SubLayer {
            weight_bits: b,
            channels,
            codes,
            ranges,
        });
    }
    Ok(subs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoweredLayer {
    /// Index of the layer in the architecture.
    pub layer: usize,
    pub act_bits: u8,
    pub clip: f64,
    pub bias: Option<Vec<f64>>,
    /// Whether the filters were reordered into contiguous groups.
    pub permuted: bool,
    pub sub_layers: Vec<SubLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoweredModel {
    pub arch: Architecture,
    pub layers: Vec<LoweredLayer>,
    pub skipped: Vec<SkipEntry>,
}

/// Result of the full pipeline: reordered model, its assignment and the split form.
#[derive(Debug, Clone)]
pub struct Lowering {
    pub model: Model,
    pub assignment: PrecisionAssignment,
    pub lowered: LoweredModel,
}

/// Plans, applies and splits in one go.
pub fn lower(model: &Model, assignment: &PrecisionAssignment) -> Result<Lowering> {
    assignment.validate(&model.space.act_set, &model.space.weight_set)?;
    let perms = (0..assignment.layers.len())
        .map(|l| plan_permutation(assignment, l))
        .collect::<Result<Vec<_>>>()?;
    let (permuted, asg, skipped) = apply_permutation(model, assignment, &perms)?;
    let lowered = split_model(&permuted, &asg, skipped)?;
    Ok(Lowering {
        model: permuted,
        assignment: asg,
        lowered,
    })
}

/// Splits every layer of an (already reordered) model.
pub fn split_model(model: &Model, assignment: &PrecisionAssignment, skipped: Vec<SkipEntry>) -> Result<LoweredModel> {
    let quant = model.arch.quant_layers();
    let mut layers = Vec::with_capacity(quant.len());
    for (q, (&i, p)) in quant.iter().zip(&model.params.layers).enumerate() {
        let la: &LayerAssignment = &assignment.layers[q];
        layers.push(LoweredLayer {
            layer: i,
            act_bits: la.act_bits,
            clip: p.clip,
            bias: p.bias.as_ref().map(|b| b.data().to_vec()),
            permuted: !skipped.iter().any(|s| s.layer == q),
            sub_layers: split_layer(&p.weight, &la.weight_bits)?,
        });
    }
    Ok(LoweredModel {
        arch: model.arch.clone(),
        layers,
        skipped,
    })
}

impl LoweredModel {
    /// Weight storage in bits.
    pub fn size_bits(&self) -> u64 {
        self.layers
            .iter()
            .flat_map(|l| &l.sub_layers)
            .map(|s| s.codes.len() as u64 * s.weight_bits as u64)
            .sum()
    }

    fn weight_shape(&self, layer: usize) -> Vec<usize> {
        self.arch.layers[layer].weight_shape().expect("quantized layer")
    }

    /// Runs every sub-layer separately and concatenates along the channel axis.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        execute(&self.arch, x, |q, input| {
            let l = &self.layers[q];
            let kind = self.arch.layers[l.layer].linear_kind().expect("quantized");
            let x_hat = pact_act_fakequant(input, l.clip, l.act_bits)?;
            let wshape = self.weight_shape(l.layer);
            let row_len: usize = wshape[1..].iter().product();
            let mut parts = Vec::with_capacity(l.sub_layers.len());
            for s in &l.sub_layers {
                let mut w = Vec::with_capacity(s.codes.len());
                for (k, &r) in s.ranges.iter().enumerate() {
                    w.extend(dequantize_channel(&s.codes[k * row_len..(k + 1) * row_len], r, s.weight_bits)?);
                }
                let mut shape = wshape.clone();
                shape[0] = s.channels.len();
                let w = Tensor::new(shape, w)?;
                let bias: Option<Vec<f64>> = l.bias.as_ref().map(|b| s.channels.iter().map(|&c| b[c]).collect());
                parts.push((exact_linear(kind, &x_hat, &w, bias.as_deref())?, &s.channels));
            }
            concat_channels(&parts, wshape[0])
        })
    }
}

/// Output of `model` under a discrete assignment, using correctly rounded sums.
pub fn reference_forward(model: &Model, assignment: &PrecisionAssignment, x: &Tensor) -> Result<Tensor> {
    let quant = model.arch.quant_layers();
    execute(&model.arch, x, |q, input| {
        let p = &model.params.layers[q];
        let la = &assignment.layers[q];
        let kind = model.arch.layers[quant[q]].linear_kind().expect("quantized");
        let x_hat = pact_act_fakequant(input, p.clip, la.act_bits)?;
        let w_hat = weight_fakequant_channels(&p.weight, &la.weight_bits)?;
        exact_linear(kind, &x_hat, &w_hat, p.bias.as_ref().map(|b| b.data()))
    })
}

/// Max absolute output difference over `n_inputs` random inputs.
pub fn verify_equivalence(
    original: &Model,
    assignment: &PrecisionAssignment,
    lowered: &LoweredModel,
    n_inputs: usize,
    seed: u64,
) -> Result<f64> {
    if original.arch != lowered.arch {
        return Err(Error::Config("lowered model has a different architecture".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = vec![n_inputs];
    shape.extend_from_slice(&original.arch.input_shape);
    let len: usize = shape.iter().product();
    let x = Tensor::new(shape, (0..len).map(|_| rng.gen_range(-0.25..1.25)).collect())?;
    let a = reference_forward(original, assignment, &x)?;
    let b = lowered.forward(&x)?;
    if a.shape() != b.shape() {
        return Err(Error::shape("verify_equivalence", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(a.max_abs_diff(&b))
}

/// Walks the architecture, delegating quantized layers to `linear`.
fn execute(arch: &Architecture, x: &Tensor, mut linear: impl FnMut(usize, &Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let mut outs: Vec<Tensor> = Vec::with_capacity(arch.layers.len());
    let mut cur = x.clone();
    let mut q = 0;
    for spec in &arch.layers {
        cur = match spec {
            LayerSpec::Conv2d { .. } => {
                q += 1;
                linear(q - 1, &cur)?
            }
            LayerSpec::Fc { .. } => {
                let input = if cur.ndim() != 2 { flatten(&cur)? } else { cur.clone() };
                q += 1;
                linear(q - 1, &input)?
            }
            LayerSpec::Relu => {
                let d = cur.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                Tensor::new(cur.shape().to_vec(), d)?
            }
            LayerSpec::AvgPool { window } => pool_forward(&cur, *window, PoolKind::Avg)?.0,
            LayerSpec::MaxPool { window } => pool_forward(&cur, *window, PoolKind::Max)?.0,
            LayerSpec::Add { from } => {
                let other = &outs[*from];
                let d = cur.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
                Tensor::new(cur.shape().to_vec(), d)?
            }
            LayerSpec::Flatten => flatten(&cur)?,
        };
        outs.push(cur.clone());
    }
    Ok(cur)
}

fn flatten(t: &Tensor) -> Result<Tensor> {
    let n = t.shape()[0];
    t.reshape(vec![n, t.len() / n.max(1)])
}

/// Places channel blocks of `[N, k, ...]` tensors at the given positions of a `[N, c, ...]` output.
fn concat_channels(parts: &[(Tensor, &Vec<usize>)], channels: usize) -> Result<Tensor> {
    let first = &parts[0].0;
    let n = first.shape()[0];
    let spatial: usize = first.shape()[2..].iter().product();
    let mut shape = first.shape().to_vec();
    shape[1] = channels;
    let mut out = vec![0.0; n * channels * spatial];
    for (t, pos) in parts {
        let k = pos.len();
        for s in 0..n {
            for (j, &c) in pos.iter().enumerate() {
                let src = &t.data()[(s * k + j) * spatial..(s * k + j + 1) * spatial];
                out[(s * channels + c) * spatial..(s * channels + c + 1) * spatial].copy_from_slice(src);
            }
        }
    }
    Tensor::new(shape, out)
}

/// Conv or fc where every output is the correctly rounded sum of its products and bias.
fn exact_linear(kind: LinearKind, x: &Tensor, w: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    let mut terms = Vec::new();
    match kind {
        LinearKind::Fc => {
            let (n, f_in) = (x.shape()[0], x.shape()[1]);
            let f_out = w.shape()[0];
            if w.shape()[1] != f_in {
                return Err(Error::shape("lowered fc", format!("input {f_in}, weight {:?}", w.shape())));
            }
            let mut out = Vec::with_capacity(n * f_out);
            for s in 0..n {
                let xr = x.row(s);
                for o in 0..f_out {
                    terms.clear();
                    terms.extend(w.row(o).iter().zip(xr).map(|(a, b)| a * b));
                    terms.extend(bias.map(|b| b[o]));
                    out.push(exact_sum(&terms));
                }
            }
            Tensor::new(vec![n, f_out], out)
        }
        LinearKind::Conv(p) => {
            let d = ConvDims::infer(x, w, p, "lowered conv")?;
            let mut out = Vec::with_capacity(d.n * d.c_out * d.oh * d.ow);
            let (xd, wd) = (x.data(), w.data());
            for s in 0..d.n {
                for co in 0..d.c_out {
                    for oy in 0..d.oh {
                        for ox in 0..d.ow {
                            terms.clear();
                            for ci in 0..d.c_in {
                                for ky in 0..d.ky {
                                    let Some(iy) = d.input_coord(oy, ky, d.h) else { continue };
                                    for kx in 0..d.kx {
                                        let Some(ix) = d.input_coord(ox, kx, d.w) else { continue };
                                        let wv = wd[((co * d.c_in + ci) * d.ky + ky) * d.kx + kx];
                                        let xv = xd[((s * d.c_in + ci) * d.h + iy) * d.w + ix];
                                        terms.push(wv * xv);
                                    }
                                }
                            }
                            terms.extend(bias.map(|b| b[co]));
                            out.push(exact_sum(&terms));
                        }
                    }
                }
            }
            Tensor::new(vec![d.n, d.c_out, d.oh, d.ow], out)
        }
    }
}

/// Correctly rounded sum of finite values (Shewchuk's algorithm), independent of order.
pub fn exact_sum(values: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for &v in values {
        let mut x = v;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let Some(mut n) = partials.len().checked_sub(1) else {
        return 0.0;
    };
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    // Round half-even across the remaining partials.
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

const MAGIC: &[u8; 8] = b"CHMXLOW\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct BlobRef {
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct SubManifest {
    weight_bits: u8,
    channels: Vec<usize>,
    codes: BlobRef,
    ranges: BlobRef,
}

#[derive(Serialize, Deserialize)]
struct LayerManifest {
    layer: usize,
    act_bits: u8,
    clip: f64,
    permuted: bool,
    bias: Option<BlobRef>,
    sub_layers: Vec<SubManifest>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    arch: Architecture,
    skipped: Vec<SkipEntry>,
    layers: Vec<LayerManifest>,
}

fn push_f64s(blob: &mut Vec<u8>, v: &[f64]) -> BlobRef {
    let offset = blob.len() as u64;
    for x in v {
        blob.extend_from_slice(&x.to_le_bytes());
    }
    BlobRef {
        offset,
        len: v.len() as u64,
    }
}

fn push_bytes(blob: &mut Vec<u8>, v: &[u8]) -> BlobRef {
    let offset = blob.len() as u64;
    blob.extend_from_slice(v);
    BlobRef {
        offset,
        len: v.len() as u64,
    }
}

/// Serializes a lowered model.
///
/// Layout: 8-byte magic `CHMXLOW\0`, `u32` format version, `u64` manifest
/// length, the JSON manifest, then the data section. Integers are little
/// endian. The data section holds, per layer, the bias as `f64` values and,
/// per sub-layer, one byte per weight code followed by the channel ranges as
/// `f64`; the manifest stores `(offset, len)` pairs into it.
pub fn encode_lowered(m: &LoweredModel) -> Result<Vec<u8>> {
    let mut blob = Vec::new();
    let layers = m
        .layers
        .iter()
        .map(|l| LayerManifest {
            layer: l.layer,
            act_bits: l.act_bits,
            clip: l.clip,
            permuted: l.permuted,
            bias: l.bias.as_ref().map(|b| push_f64s(&mut blob, b)),
            sub_layers: l
                .sub_layers
                .iter()
                .map(|s| SubManifest {
                    weight_bits: s.weight_bits,
                    channels: s.channels.clone(),
                    codes: push_bytes(&mut blob, &s.codes),
                    ranges: push_f64s(&mut blob, &s.ranges),
                })
                .collect(),
        })
        .collect();
    let manifest = serde_json::to_vec(&Manifest {
        format_version: FORMAT_VERSION,
        arch: m.arch.clone(),
        skipped: m.skipped.clone(),
        layers,
    })?;
    let mut out = Vec::with_capacity(20 + manifest.len() + blob.len());
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(manifest.len() as u64).to_le_bytes())?;
    out.write_all(&manifest)?;
    out.write_all(&blob)?;
    Ok(out)
}

fn read_blob(data: &[u8], r: BlobRef, width: usize) -> Result<&[u8]> {
    let start = r.offset as usize;
    let end = start + r.len as usize * width;
    data.get(start..end)
        .ok_or_else(|| Error::Format(format!("blob {start}..{end} outside data section of {}", data.len())))
}

fn read_f64s(data: &[u8], r: BlobRef) -> Result<Vec<f64>> {
    Ok(read_blob(data, r, 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn decode_lowered(bytes: &[u8]) -> Result<LoweredModel> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a lowered-model file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < mlen {
        return Err(Error::Format("truncated manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..mlen])?;
    if manifest.format_version != version {
        return Err(Error::Format("manifest version differs from header".into()));
    }
    manifest.arch.infer_shapes()?;
    let data = &body[mlen..];
    let layers = manifest
        .layers
        .into_iter()
        .map(|l| {
            Ok(LoweredLayer {
                layer: l.layer,
                act_bits: l.act_bits,
                clip: l.clip,
                permuted: l.permuted,
                bias: l.bias.map(|b| read_f64s(data, b)).transpose()?,
                sub_layers: l
                    .sub_layers
                    .into_iter()
                    .map(|s| {
                        Ok(SubLayer {
                            weight_bits: s.weight_bits,
                            channels: s.channels,
                            codes: read_blob(data, s.codes, 1)?.to_vec(),
                            ranges: read_f64s(data, s.ranges)?,
                        })
                    })
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(LoweredModel {
        arch: manifest.arch,
        layers,
        skipped: manifest.skipped,
    })
}

pub fn export_lowered(m: &LoweredModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_lowered(m)?)
}

pub fn import_lowered(path: &Path) -> Result<LoweredModel> {
    decode_lowered(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SearchSpace;

    fn asg(bits: &[&[u8]]) -> PrecisionAssignment {
        PrecisionAssignment {
            layers: bits
                .iter()
                .map(|b| LayerAssignment {
                    act_bits: 8,
                    weight_bits: b.to_vec(),
                })
                .collect(),
        }
    }

    #[test]
    fn plan_is_stable_ascending() {
        let p = plan_permutation(&asg(&[&[8, 2, 4, 2]]), 0).unwrap();
        assert_eq!(p.perm, vec![1, 3, 2, 0]);
        assert!(plan_permutation(&asg(&[&[4, 4, 4]]), 0).unwrap().is_identity());
    }

    #[test]
    fn rejects_non_bijection() {
        assert!(ChannelPermutation::new(0, vec![0, 0, 1]).is_err());
        assert!(ChannelPermutation::new(0, vec![0, 3, 1]).is_err());
    }

    #[test]
    fn split_partitions_channels() {
        let w = Tensor::new(vec![16, 2], (0..32).map(|i| i as f64 - 10.0).collect()).unwrap();
        let mut bits = vec![2u8; 3];
        bits.extend([4; 5]);
        bits.extend([8; 8]);
        let subs = split_layer(&w, &bits).unwrap();
        assert_eq!(subs.iter().map(|s| s.channels.len()).collect::<Vec<_>>(), vec![3, 5, 8]);
        assert!(subs.iter().all(|s| s.is_contiguous()));
        let single = split_layer(&w, &[4; 16]).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn exact_sum_is_order_independent() {
        let v = [1e16, 1.0, -1e16, 1e-3, 3.5, -2.25];
        let mut r = v;
        r.reverse();
        assert_eq!(exact_sum(&v), exact_sum(&r));
        assert_eq!(exact_sum(&v), 2.251);
        assert_eq!(exact_sum(&[0.1, 0.2, 0.3]), 0.6);
        assert_eq!(exact_sum(&[]), 0.0);
    }

    #[test]
    fn residual_and_last_layers_are_skipped() {
        let arch = Architecture {
            input_shape: vec![2, 4, 4],
            layers: vec![
                LayerSpec::conv(2, 3, 3, 1, 1),
                LayerSpec::Relu,
                LayerSpec::conv(3, 3, 3, 1, 1),
                LayerSpec::Add { from: 1 },
                LayerSpec::Flatten,
                LayerSpec::fc(48, 2),
            ],
        };
        let m = Model::init(arch, SearchSpace::default(), 2.0, 4).unwrap();
        let a = asg(&[&[8, 2, 4], &[4, 2, 2], &[8, 2]]);
        let l = lower(&m, &a).unwrap();
        let skipped: Vec<usize> = l.lowered.skipped.iter().map(|s| s.layer).collect();
        assert_eq!(skipped, vec![0, 1, 2]);
        assert!(l.lowered.layers.iter().all(|l| !l.permuted));
        assert_eq!(l.lowered.layers[0].sub_layers[0].channels, vec![1]);
        assert_eq!(verify_equivalence(&m, &a, &l.lowered, 8, 1).unwrap(), 0.0);
    }

    #[test]
    fn conv_to_fc_through_flatten() {
        let arch = Architecture {
            input_shape: vec![1, 4, 4],
            layers: vec![
                LayerSpec::conv(1, 4, 3, 1, 1),
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: 2 },
                LayerSpec::Flatten,
                LayerSpec::fc(16, 3),
            ],
        };
        let m = Model::init(arch, SearchSpace::default(), 2.0, 9).unwrap();
        let a = asg(&[&[8, 2, 4, 2], &[2, 8, 4]]);
        let l = lower(&m, &a).unwrap();
        assert_eq!(l.lowered.skipped.len(), 1);
        assert_eq!(l.assignment.layers[0].weight_bits, vec![2, 2, 4, 8]);
        assert_eq!(verify_equivalence(&m, &a, &l.lowered, 16, 2).unwrap(), 0.0);
        assert_eq!(l.lowered.size_bits(), crate::cost::exact_model_size(&m.arch.quant_geometries().unwrap(), &a).unwrap());
    }

    #[test]
    fn export_round_trip() {
        let m = Model::init(Architecture::mlp(&[3, 5, 2]), SearchSpace::default(), 2.0, 1).unwrap();
        let a = asg(&[&[8, 2, 4, 2, 8], &[4, 2]]);
        let l = lower(&m, &a).unwrap().lowered;
        let back = decode_lowered(&encode_lowered(&l).unwrap()).unwrap();
        assert_eq!(back, l);
        let mut bad = encode_lowered(&l).unwrap();
        bad[8] = 9;
        assert!(decode_lowered(&bad).is_err());
    }
}
