//! Network description and the quantized forward pass.
//!
//! Networks are sequential with optional residual links: every layer reads the
//! output of the previous one, and `add` layers additionally read the output of
//! an earlier layer. Conv and fc layers are the quantized layers; each carries
//! a float weight, an optional float bias, a PACT clip and (when searchable)
//! its gate logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::gates::{self, ActMode, GateState, LayerGates, LinearKind, PrecisionAssignment, PrecisionSet, WeightMode};
use crate::kernels::{conv_output_extent, ConvParams, PoolKind};
use crate::tensor::Tensor;

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        /// `[K_y, K_x]`
        kernel: [usize; 2],
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "yes")]
        bias: bool,
        #[serde(default = "yes")]
        searchable: bool,
    },
    Fc {
        in_features: usize,
        out_features: usize,
        #[serde(default = "yes")]
        bias: bool,
        #[serde(default = "yes")]
        searchable: bool,
    },
    Relu,
    AvgPool {
        window: usize,
    },
    MaxPool {
        window: usize,
    },
    /// Adds the output of layer `from` to the running activation.
    Add {
        from: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, k: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: [k, k],
            stride,
            padding,
            bias: true,
            searchable: true,
        }
    }

    pub fn fc(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Fc {
            in_features,
            out_features,
            bias: true,
            searchable: true,
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Fc { .. })
    }

    pub fn out_channels(&self) -> Option<usize> {
        match self {
            LayerSpec::Conv2d { out_channels, .. } => Some(*out_channels),
            LayerSpec::Fc { out_features, .. } => Some(*out_features),
            _ => None,
        }
    }

    fn has_bias(&self) -> bool {
        match self {
            LayerSpec::Conv2d { bias, .. } | LayerSpec::Fc { bias, .. } => *bias,
            _ => false,
        }
    }

    fn searchable(&self) -> bool {
        match self {
            LayerSpec::Conv2d { searchable, .. } | LayerSpec::Fc { searchable, .. } => *searchable,
            _ => false,
        }
    }

    /// Weight tensor shape of a quantized layer.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(vec![*out_channels, *in_channels, kernel[0], kernel[1]]),
            LayerSpec::Fc {
                in_features,
                out_features,
                ..
            } => Some(vec![*out_features, *in_features]),
            _ => None,
        }
    }

    pub fn linear_kind(&self) -> Option<LinearKind> {
        match self {
            LayerSpec::Conv2d { stride, padding, .. } => Some(LinearKind::Conv(ConvParams {
                stride: *stride,
                padding: *padding,
            })),
            LayerSpec::Fc { .. } => Some(LinearKind::Fc),
            _ => None,
        }
    }
}

/// Geometry of a quantized layer as used by the cost models.
///
/// Fc layers are treated as 1x1 convolutions on a 1x1 output map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub ky: usize,
    pub kx: usize,
    pub oh: usize,
    pub ow: usize,
}

impl QuantGeometry {
    pub fn fc(in_features: usize, out_features: usize) -> Self {
        Self {
            c_in: in_features,
            c_out: out_features,
            ky: 1,
            kx: 1,
            oh: 1,
            ow: 1,
        }
    }

    /// Weights per output channel, `C_in * K_x * K_y`.
    pub fn weight_volume(&self) -> usize {
        self.c_in * self.kx * self.ky
    }

    /// Multiply-accumulates to produce the layer output.
    pub fn macs(&self) -> usize {
        self.c_out * self.weight_volume() * self.oh * self.ow
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Per-sample input shape, e.g. `[2]` or `[1, 28, 28]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Per-sample output shape of every layer; validates the whole network.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_shape.clone();
        if cur.is_empty() || cur.contains(&0) {
            return Err(Error::Config(format!("invalid input shape {cur:?}")));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let ctx = |d: String| Error::shape(format!("layer {i}"), d);
            cur = match layer {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    if cur.len() != 3 || cur[0] != *in_channels {
                        return Err(ctx(format!("conv2d expects [{in_channels}, H, W], got {cur:?}")));
                    }
                    if *out_channels == 0 || kernel.contains(&0) || *stride == 0 {
                        return Err(ctx("conv2d geometry must be positive".into()));
                    }
                    let oh = conv_output_extent(cur[1], kernel[0], *stride, *padding);
                    let ow = conv_output_extent(cur[2], kernel[1], *stride, *padding);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => vec![*out_channels, oh, ow],
                        _ => return Err(ctx(format!("kernel {kernel:?} larger than input {cur:?}"))),
                    }
                }
                LayerSpec::Fc {
                    in_features,
                    out_features,
                    ..
                } => {
                    if cur.len() != 1 || cur[0] != *in_features {
                        return Err(ctx(format!("fc expects [{in_features}], got {cur:?}")));
                    }
                    if *out_features == 0 {
                        return Err(ctx("fc needs at least one output".into()));
                    }
                    vec![*out_features]
                }
                LayerSpec::Relu => cur,
                LayerSpec::AvgPool { window } | LayerSpec::MaxPool { window } => {
                    if cur.len() != 3 || *window == 0 || cur[1] < *window || cur[2] < *window {
                        return Err(ctx(format!("pool window {window} incompatible with {cur:?}")));
                    }
                    vec![cur[0], cur[1] / window, cur[2] / window]
                }
                LayerSpec::Add { from } => {
                    if *from >= i {
                        return Err(ctx(format!("add references layer {from}, which is not earlier")));
                    }
                    if shapes[*from] != cur {
                        return Err(ctx(format!("add operands {:?} and {cur:?} differ", shapes[*from])));
                    }
                    cur
                }
                LayerSpec::Flatten => vec![cur.iter().product()],
            };
            shapes.push(cur.clone());
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.infer_shapes()?.pop().unwrap_or_else(|| self.input_shape.clone()))
    }

    /// Layer indices of the quantized (conv / fc) layers.
    pub fn quant_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].is_quantized()).collect()
    }

    /// Cost geometry of each quantized layer, in order.
    pub fn quant_geometries(&self) -> Result<Vec<QuantGeometry>> {
        let shapes = self.infer_shapes()?;
        Ok(self
            .quant_layers()
            .into_iter()
            .map(|i| match &self.layers[i] {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => QuantGeometry {
                    c_in: *in_channels,
                    c_out: *out_channels,
                    ky: kernel[0],
                    kx: kernel[1],
                    oh: shapes[i][1],
                    ow: shapes[i][2],
                },
                LayerSpec::Fc {
                    in_features,
                    out_features,
                    ..
                } => QuantGeometry::fc(*in_features, *out_features),
                _ => unreachable!(),
            })
            .collect())
    }

    /// A plain fully connected network with ReLU between layers.
    pub fn mlp(widths: &[usize]) -> Self {
        let mut layers = Vec::new();
        for (k, w) in widths.windows(2).enumerate() {
            if k > 0 {
                layers.push(LayerSpec::Relu);
            }
            layers.push(LayerSpec::fc(w[0], w[1]));
        }
        Self {
            input_shape: vec![widths[0]],
            layers,
        }
    }
}

/// Granularity of the weight gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One gate row per output channel.
    #[default]
    Channel,
    /// One gate row shared by all channels of a layer.
    Layer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub act_set: PrecisionSet,
    pub weight_set: PrecisionSet,
    /// Searches activation precisions; when false they are fixed at the set maximum.
    pub search_activations: bool,
    pub granularity: Granularity,
    /// Keeps the first and last quantized layers at the maximum precision.
    pub pin_first_last: bool,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            act_set: PrecisionSet::default(),
            weight_set: PrecisionSet::default(),
            search_activations: true,
            granularity: Granularity::Channel,
            pin_first_last: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantLayerParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub clip: f64,
    pub delta: Option<Tensor>,
    pub gamma: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<QuantLayerParams>,
}

/// Names one trainable tensor of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamSlot {
    Weight(usize),
    Bias(usize),
    Clip(usize),
    Delta(usize),
    Gamma(usize),
}

impl ParamSlot {
    pub fn is_gate(&self) -> bool {
        matches!(self, ParamSlot::Delta(_) | ParamSlot::Gamma(_))
    }
}

/// Which parameter groups receive gradients in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub weights: bool,
    pub gates: bool,
}

impl Trainable {
    pub const NONE: Self = Self {
        weights: false,
        gates: false,
    };
    pub const WEIGHTS: Self = Self {
        weights: true,
        gates: false,
    };
    pub const GATES: Self = Self {
        weights: false,
        gates: true,
    };
    pub const ALL: Self = Self {
        weights: true,
        gates: true,
    };
}

/// Precision regime of a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Precision<'a> {
    /// Every tensor at one bit-width (warmup at `p_max`).
    Uniform(u8),
    /// Softmax-blended copies at temperature `tau`.
    Search { tau: f64 },
    /// One bit-width per activation layer and weight channel.
    Discrete(&'a PrecisionAssignment),
}

/// Graph handles of one quantized layer's leaves.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Option<Var>,
    pub clip: Var,
    pub delta: Option<Var>,
    pub gamma: Option<Var>,
}

pub struct ForwardPass {
    pub graph: Graph,
    pub output: Var,
    pub layers: Vec<LayerVars>,
}

impl ForwardPass {
    /// Every leaf that could have received a gradient.
    pub fn slots(&self) -> Vec<(ParamSlot, Var)> {
        let mut v = Vec::new();
        for (n, l) in self.layers.iter().enumerate() {
            v.push((ParamSlot::Weight(n), l.weight));
            if let Some(b) = l.bias {
                v.push((ParamSlot::Bias(n), b));
            }
            v.push((ParamSlot::Clip(n), l.clip));
            if let Some(d) = l.delta {
                v.push((ParamSlot::Delta(n), d));
            }
            if let Some(g) = l.gamma {
                v.push((ParamSlot::Gamma(n), g));
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub arch: Architecture,
    pub space: SearchSpace,
    pub params: ModelParams,
}

impl Model {
    /// He-initialized weights, zero biases, clips at `clip_init`, zero gate logits.
    pub fn init(arch: Architecture, space: SearchSpace, clip_init: f64, seed: u64) -> Result<Self> {
        arch.infer_shapes()?;
        if !(clip_init > 0.0) {
            return Err(Error::Config(format!("clip init must be positive, got {clip_init}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let quant = arch.quant_layers();
        let last = quant.len().saturating_sub(1);
        let mut layers = Vec::with_capacity(quant.len());
        for (n, &i) in quant.iter().enumerate() {
            let spec = &arch.layers[i];
            let shape = spec.weight_shape().expect("quantized layer");
            let fan_in: usize = shape[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            let data: Vec<f64> = (0..shape.iter().product::<usize>()).map(|_| normal.sample(&mut rng)).collect();
            let c_out = shape[0];
            let pinned = space.pin_first_last && (n == 0 || n == last);
            let searchable = spec.searchable() && !pinned;
            let delta = (searchable && space.search_activations).then(|| Tensor::zeros(&[space.act_set.len()]));
            let gamma = searchable.then(|| {
                let rows = match space.granularity {
                    Granularity::Channel => c_out,
                    Granularity::Layer => 1,
                };
                Tensor::zeros(&[rows, space.weight_set.len()])
            });
            layers.push(QuantLayerParams {
                weight: Tensor::new(shape, data)?,
                bias: spec.has_bias().then(|| Tensor::zeros(&[c_out])),
                clip: clip_init,
                delta,
                gamma,
            });
        }
        Ok(Self {
            arch,
            space,
            params: ModelParams { layers },
        })
    }

    pub fn gate_state(&self, tau: f64) -> GateState {
        GateState {
            tau,
            layers: self
                .params
                .layers
                .iter()
                .map(|l| LayerGates {
                    delta: l.delta.as_ref().map(|d| d.data().to_vec()),
                    gamma: l.gamma.clone(),
                    channels: l.weight.shape()[0],
                })
                .collect(),
        }
    }

    pub fn discretize(&self, tau: f64) -> Result<PrecisionAssignment> {
        gates::discretize(&self.gate_state(tau), &self.space.act_set, &self.space.weight_set)
    }

    pub fn slot(&self, s: ParamSlot) -> Option<&Tensor> {
        let p = &self.params.layers;
        match s {
            ParamSlot::Weight(n) => p.get(n).map(|l| &l.weight),
            ParamSlot::Bias(n) => p.get(n).and_then(|l| l.bias.as_ref()),
            ParamSlot::Delta(n) => p.get(n).and_then(|l| l.delta.as_ref()),
            ParamSlot::Gamma(n) => p.get(n).and_then(|l| l.gamma.as_ref()),
            ParamSlot::Clip(_) => None,
        }
    }

    /// Mutable view of a slot's values (clips are one-element slices).
    pub fn slot_values_mut(&mut self, s: ParamSlot) -> Option<&mut [f64]> {
        let p = &mut self.params.layers;
        match s {
            ParamSlot::Weight(n) => p.get_mut(n).map(|l| l.weight.data_mut()),
            ParamSlot::Bias(n) => p.get_mut(n).and_then(|l| l.bias.as_mut()).map(|t| t.data_mut()),
            ParamSlot::Clip(n) => p.get_mut(n).map(|l| std::slice::from_mut(&mut l.clip)),
            ParamSlot::Delta(n) => p.get_mut(n).and_then(|l| l.delta.as_mut()).map(|t| t.data_mut()),
            ParamSlot::Gamma(n) => p.get_mut(n).and_then(|l| l.gamma.as_mut()).map(|t| t.data_mut()),
        }
    }

    /// Concatenated values of all weight-side parameters (weights, biases, clips).
    pub fn weight_snapshot(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.params.layers {
            v.extend_from_slice(l.weight.data());
            if let Some(b) = &l.bias {
                v.extend_from_slice(b.data());
            }
            v.push(l.clip);
        }
        v
    }

    /// Concatenated values of all gate logits.
    pub fn gate_snapshot(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.params.layers {
            if let Some(d) = &l.delta {
                v.extend_from_slice(d.data());
            }
            if let Some(g) = &l.gamma {
                v.extend_from_slice(g.data());
            }
        }
        v
    }

    /// Builds the graph for one batch `[N, ...input_shape]`.
    pub fn forward(&self, input: &Tensor, precision: Precision<'_>, trainable: Trainable) -> Result<ForwardPass> {
        let mut expected = vec![input.shape().first().copied().unwrap_or(0)];
        expected.extend_from_slice(&self.arch.input_shape);
        if input.shape() != expected.as_slice() {
            return Err(Error::shape(
                "model input",
                format!("expected {expected:?}, got {:?}", input.shape()),
            ));
        }
        if let Precision::Discrete(a) = precision {
            if a.layers.len() != self.params.layers.len() {
                return Err(Error::Config(format!(
                    "assignment covers {} layers, model has {}",
                    a.layers.len(),
                    self.params.layers.len()
                )));
            }
        }
        let mut g = Graph::new();
        let x0 = g.constant(input.clone());
        let mut outs: Vec<Var> = Vec::with_capacity(self.arch.layers.len());
        let mut bound = Vec::with_capacity(self.params.layers.len());
        let mut cur = x0;
        let mut q = 0;
        for (i, spec) in self.arch.layers.iter().enumerate() {
            cur = match spec {
                LayerSpec::Conv2d { .. } | LayerSpec::Fc { .. } => {
                    let p = &self.params.layers[q];
                    let leaf = |g: &mut Graph, t: Tensor, train: bool| if train { g.param(t) } else { g.constant(t) };
                    let vars = LayerVars {
                        weight: leaf(&mut g, p.weight.clone(), trainable.weights),
                        bias: p.bias.clone().map(|b| leaf(&mut g, b, trainable.weights)),
                        clip: leaf(&mut g, Tensor::scalar(p.clip), trainable.weights),
                        delta: p.delta.clone().map(|d| leaf(&mut g, d, trainable.gates)),
                        gamma: p.gamma.clone().map(|d| leaf(&mut g, d, trainable.gates)),
                    };
                    let channels = p.weight.shape()[0];
                    let p_max_act = self.space.act_set.max();
                    let p_max_w = self.space.weight_set.max();
                    let (act, weight) = match precision {
                        Precision::Uniform(b) => (ActMode::Fixed(b), WeightMode::Fixed(vec![b; channels])),
                        Precision::Discrete(a) => (
                            ActMode::Fixed(a.layers[q].act_bits),
                            WeightMode::Fixed(a.layers[q].weight_bits.clone()),
                        ),
                        Precision::Search { tau } => (
                            match vars.delta {
                                Some(delta) => ActMode::Gated {
                                    delta,
                                    tau,
                                    set: &self.space.act_set,
                                },
                                None => ActMode::Fixed(p_max_act),
                            },
                            match vars.gamma {
                                Some(gamma) => WeightMode::Gated {
                                    gamma,
                                    tau,
                                    set: &self.space.weight_set,
                                },
                                None => WeightMode::Fixed(vec![p_max_w; channels]),
                            },
                        ),
                    };
                    let kind = spec.linear_kind().expect("quantized");
                    let x_in = if matches!(spec, LayerSpec::Fc { .. }) && g.value(cur).ndim() != 2 {
                        g.flatten(cur)?
                    } else {
                        cur
                    };
                    let y = gates::mixedprec_layer_forward(
                        &mut g,
                        kind,
                        x_in,
                        vars.weight,
                        vars.bias,
                        vars.clip,
                        act,
                        &weight,
                        &format!("layer {i}"),
                    )?;
                    bound.push(vars);
                    q += 1;
                    y
                }
                LayerSpec::Relu => g.relu(cur)?,
                LayerSpec::AvgPool { window } => g.pool(cur, *window, PoolKind::Avg)?,
                LayerSpec::MaxPool { window } => g.pool(cur, *window, PoolKind::Max)?,
                LayerSpec::Add { from } => g.add(cur, outs[*from])?,
                LayerSpec::Flatten => g.flatten(cur)?,
            };
            outs.push(cur);
        }
        Ok(ForwardPass {
            graph: g,
            output: cur,
            layers: bound,
        })
    }

    /// Output of the network without building gradients.
    pub fn predict(&self, input: &Tensor, precision: Precision<'_>) -> Result<Tensor> {
        let pass = self.forward(input, precision, Trainable::NONE)?;
        Ok(pass.graph.value(pass.output).clone())
    }
}
