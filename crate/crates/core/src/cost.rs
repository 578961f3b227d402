//! Cost models: differentiable size and energy regularizers, exact accounting
//! of discretized models, the energy look-up table and search-space counting.
//!
//! Size: `C_in * K_x * K_y * sum_i sum_p gamma_hat[i, p] * p` bits per layer.
//!
//! Energy: `Omega * sum_px delta_hat[px] * (1 / C_out) * sum_i sum_pw
//! gamma_hat[i, pw] * C(px, pw)` picojoules per layer, where `Omega` is the
//! layer's MAC count and `C` the per-MAC energy table. The channel sum is
//! averaged so the bracket is an expected energy per operation.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::gates::{softmax_temperature, GateState, PrecisionAssignment, PrecisionSet};
use crate::model::{ForwardPass, Model, QuantGeometry};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    #[default]
    Size,
    Energy,
}

impl std::str::FromStr for RegMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "size" => Ok(RegMode::Size),
            "energy" => Ok(RegMode::Energy),
            other => Err(Error::Config(format!("unknown regularizer mode '{other}'"))),
        }
    }
}

/// Energy per MAC, in picojoules, for each (activation bits, weight bits) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLut {
    entries: BTreeMap<(u8, u8), f64>,
    pub hardware: String,
    pub clock_mhz: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct LutRow {
    px: u8,
    pw: u8,
    pj_per_mac: f64,
}

impl CostLut {
    pub fn from_entries(entries: impl IntoIterator<Item = ((u8, u8), f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for ((px, pw), c) in entries {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::Config(format!("LUT entry ({px}, {pw}) must be positive, got {c}")));
            }
            if map.insert((px, pw), c).is_some() {
                return Err(Error::Config(format!("duplicate LUT entry ({px}, {pw})")));
            }
        }
        Ok(Self {
            entries: map,
            hardware: "unspecified".into(),
            clock_mhz: None,
        })
    }

    /// The same cost `c` for every pair of the two sets.
    pub fn uniform(act_set: &PrecisionSet, weight_set: &PrecisionSet, c: f64) -> Result<Self> {
        Self::from_entries(
            act_set
                .bits()
                .iter()
                .flat_map(|&a| weight_set.bits().iter().map(move |&w| ((a, w), c))),
        )
    }

    /// Parses the `px,pw,pj_per_mac` CSV format.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["px", "pw", "pj_per_mac"] {
            return Err(Error::Config(format!(
                "LUT header must be 'px,pw,pj_per_mac', got '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for r in rdr.deserialize::<LutRow>() {
            let r = r.map_err(|e| Error::Config(format!("LUT row: {e}")))?;
            rows.push(((r.px, r.pw), r.pj_per_mac));
        }
        Self::from_entries(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::Config(format!("cannot open LUT {}: {e}", path.display())))?;
        Self::from_csv_reader(f)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("px,pw,pj_per_mac\n");
        for ((px, pw), c) in &self.entries {
            s.push_str(&format!("{px},{pw},{c}\n"));
        }
        s
    }

    pub fn get(&self, px: u8, pw: u8) -> Result<f64> {
        self.entries
            .get(&(px, pw))
            .copied()
            .ok_or_else(|| Error::Config(format!("LUT has no entry for ({px}, {pw})")))
    }

    /// Checks that every pair of the two sets is present.
    pub fn validate(&self, act_set: &PrecisionSet, weight_set: &PrecisionSet) -> Result<()> {
        self.table(act_set, weight_set).map(|_| ())
    }

    /// Row-major `|act_set| x |weight_set|` table.
    pub fn table(&self, act_set: &PrecisionSet, weight_set: &PrecisionSet) -> Result<Vec<f64>> {
        let mut t = Vec::with_capacity(act_set.len() * weight_set.len());
        for &a in act_set.bits() {
            for &w in weight_set.bits() {
                t.push(self.get(a, w)?);
            }
        }
        Ok(t)
    }
}

/// Precision-independent per-layer quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCostContext {
    pub omega: usize,
    pub weight_volume: usize,
    pub c_out: usize,
}

impl From<&QuantGeometry> for LayerCostContext {
    fn from(g: &QuantGeometry) -> Self {
        Self {
            omega: g.macs(),
            weight_volume: g.weight_volume(),
            c_out: g.c_out,
        }
    }
}

fn check_matrix(gamma_hat: &[f64], k: usize, c_out: usize) -> Result<()> {
    if k == 0 || gamma_hat.len() != c_out * k {
        return Err(Error::shape(
            "cost model",
            format!("gate matrix of {} entries for {c_out} x {k}", gamma_hat.len()),
        ));
    }
    Ok(())
}

/// Effective weight bits of one layer; `gamma_hat` is the row-major `C_out x |P_W|` softmax.
pub fn size_reg(ctx: &LayerCostContext, gamma_hat: &[f64], weight_set: &PrecisionSet) -> Result<f64> {
    let k = weight_set.len();
    check_matrix(gamma_hat, k, ctx.c_out)?;
    let mut s = 0.0;
    for row in gamma_hat.chunks(k) {
        for (g, &p) in row.iter().zip(weight_set.bits()) {
            s += g * p as f64;
        }
    }
    Ok(ctx.weight_volume as f64 * s)
}

/// Expected energy of one layer in picojoules.
pub fn energy_reg(
    ctx: &LayerCostContext,
    delta_hat: &[f64],
    gamma_hat: &[f64],
    lut: &CostLut,
    act_set: &PrecisionSet,
    weight_set: &PrecisionSet,
) -> Result<f64> {
    let k = weight_set.len();
    check_matrix(gamma_hat, k, ctx.c_out)?;
    if delta_hat.len() != act_set.len() {
        return Err(Error::shape("energy_reg", "activation gate length differs from P_X"));
    }
    let table = lut.table(act_set, weight_set)?;
    let mut mean = vec![0.0; k];
    for row in gamma_hat.chunks(k) {
        mean.iter_mut().zip(row).for_each(|(m, g)| *m += g);
    }
    mean.iter_mut().for_each(|m| *m /= ctx.c_out as f64);
    Ok(ctx.omega as f64 * expected_per_mac(delta_hat, &mean, &table))
}

/// `sum_a u_a * sum_b m_b * table[a, b]`, in the same order as the graph op.
fn expected_per_mac(u: &[f64], m: &[f64], table: &[f64]) -> f64 {
    let b = m.len();
    let mut s = 0.0;
    for (ai, &ua) in u.iter().enumerate() {
        let inner: f64 = m.iter().enumerate().map(|(bi, &mb)| mb * table[ai * b + bi]).sum();
        s += ua * inner;
    }
    s
}

fn softmax_rows(logits: &[f64], k: usize, tau: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(logits.len());
    for r in logits.chunks(k) {
        out.extend(softmax_temperature(r, tau)?);
    }
    Ok(out)
}

fn one_hot(set: &PrecisionSet, bits: u8) -> Vec<f64> {
    set.bits().iter().map(|&b| if b == bits { 1.0 } else { 0.0 }).collect()
}

/// Full `C_out x K` softmax of a layer's weight gates (tied rows expanded).
pub fn gamma_hat(gamma: &Tensor, channels: usize, tau: f64) -> Result<Vec<f64>> {
    let k = *gamma.shape().last().unwrap_or(&1);
    let probs = softmax_rows(gamma.data(), k, tau)?;
    if probs.len() == k && channels > 1 {
        Ok(probs.repeat(channels))
    } else {
        Ok(probs)
    }
}

/// Sum of the per-layer regularizer over all searchable layers.
pub fn total_reg(
    geoms: &[QuantGeometry],
    state: &GateState,
    mode: RegMode,
    lut: Option<&CostLut>,
    act_set: &PrecisionSet,
    weight_set: &PrecisionSet,
) -> Result<f64> {
    let mut total = 0.0;
    for (geom, gates) in geoms.iter().zip(&state.layers) {
        let Some(gamma) = &gates.gamma else { continue };
        let ctx = LayerCostContext::from(geom);
        let gh = gamma_hat(gamma, ctx.c_out, state.tau)?;
        total += match mode {
            RegMode::Size => size_reg(&ctx, &gh, weight_set)?,
            RegMode::Energy => {
                let lut = lut.ok_or_else(|| Error::Config("energy mode requires a LUT".into()))?;
                let dh = match &gates.delta {
                    Some(d) => softmax_temperature(d, state.tau)?,
                    None => one_hot(act_set, act_set.max()),
                };
                energy_reg(&ctx, &dh, &gh, lut, act_set, weight_set)?
            }
        };
    }
    Ok(total)
}

/// Adds the regularizer of every searchable layer to a forward pass graph.
///
/// Returns `None` when the model has no searchable layer.
pub fn regularizer_var(
    pass: &mut ForwardPass,
    model: &Model,
    mode: RegMode,
    tau: f64,
    lut: Option<&CostLut>,
) -> Result<Option<Var>> {
    let geoms = model.arch.quant_geometries()?;
    let (act_set, weight_set) = (&model.space.act_set, &model.space.weight_set);
    let table = match mode {
        RegMode::Energy => Some(
            lut.ok_or_else(|| Error::Config("energy mode requires a LUT".into()))?
                .table(act_set, weight_set)?,
        ),
        RegMode::Size => None,
    };
    let mut total: Option<Var> = None;
    let layers = pass.layers.clone();
    for (geom, vars) in geoms.iter().zip(&layers) {
        let Some(gamma) = vars.gamma else { continue };
        let g = &mut pass.graph;
        let rows = g.value(gamma).shape()[0];
        let gh = g.softmax(gamma, tau)?;
        let term = match mode {
            RegMode::Size => {
                // a tied row stands for all C_out channels
                let per_row = if rows == 1 { geom.c_out } else { 1 };
                let scale = (geom.weight_volume() * per_row) as f64;
                let coeffs = (0..rows)
                    .flat_map(|_| weight_set.bits().iter().map(move |&p| scale * p as f64))
                    .collect();
                g.weighted_sum(gh, coeffs)?
            }
            RegMode::Energy => {
                let dh = match vars.delta {
                    Some(d) => g.softmax(d, tau)?,
                    None => g.constant(Tensor::from_vec(one_hot(act_set, act_set.max()))),
                };
                let table = table.clone().expect("energy table");
                g.row_mean_bilinear(dh, gh, table, geom.macs() as f64)?
            }
        };
        total = Some(match total {
            None => term,
            Some(t) => pass.graph.add(t, term)?,
        });
    }
    Ok(total)
}

/// Total weight storage in bits of a discretized model.
pub fn exact_model_size(geoms: &[QuantGeometry], assignment: &PrecisionAssignment) -> Result<u64> {
    check_assignment(geoms, assignment)?;
    Ok(geoms
        .iter()
        .zip(&assignment.layers)
        .map(|(g, l)| g.weight_volume() as u64 * l.weight_bits.iter().map(|&b| b as u64).sum::<u64>())
        .sum())
}

/// Energy of a discretized model in picojoules.
pub fn exact_model_energy_pj(
    geoms: &[QuantGeometry],
    assignment: &PrecisionAssignment,
    lut: &CostLut,
    weight_set: &PrecisionSet,
) -> Result<f64> {
    check_assignment(geoms, assignment)?;
    let mut total = 0.0;
    for (g, l) in geoms.iter().zip(&assignment.layers) {
        // Channel counts per weight precision, in set order.
        let mean: Vec<f64> = weight_set
            .bits()
            .iter()
            .map(|&p| l.weight_bits.iter().filter(|&&b| b == p).count() as f64 / g.c_out as f64)
            .collect();
        if let Some(b) = l.weight_bits.iter().find(|b| !weight_set.contains(**b)) {
            return Err(Error::Config(format!("weight bits {b} not in {:?}", weight_set.bits())));
        }
        let row: Vec<f64> = weight_set
            .bits()
            .iter()
            .map(|&pw| lut.get(l.act_bits, pw))
            .collect::<Result<_>>()?;
        total += g.macs() as f64 * expected_per_mac(&[1.0], &mean, &row);
    }
    Ok(total)
}

/// Energy of a discretized model in microjoules.
pub fn exact_model_energy(
    geoms: &[QuantGeometry],
    assignment: &PrecisionAssignment,
    lut: &CostLut,
    weight_set: &PrecisionSet,
) -> Result<f64> {
    Ok(exact_model_energy_pj(geoms, assignment, lut, weight_set)? * 1e-6)
}

fn check_assignment(geoms: &[QuantGeometry], assignment: &PrecisionAssignment) -> Result<()> {
    if geoms.len() != assignment.layers.len() {
        return Err(Error::Config(format!(
            "assignment has {} layers, model has {}",
            assignment.layers.len(),
            geoms.len()
        )));
    }
    for (n, (g, l)) in geoms.iter().zip(&assignment.layers).enumerate() {
        if g.c_out != l.weight_bits.len() {
            return Err(Error::Config(format!(
                "layer {n}: {} channel bit-widths for {} channels",
                l.weight_bits.len(),
                g.c_out
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceMode {
    Layerwise,
    Channelwise,
}

/// `log10` of the number of distinct precision assignments.
///
/// `channels` holds `C_out` of every searched layer.
pub fn count_search_space(channels: &[usize], weight_set: &PrecisionSet, act_set: &PrecisionSet, mode: SpaceMode) -> f64 {
    let l = channels.len() as f64;
    let lw = (weight_set.len() as f64).log10();
    let lx = (act_set.len() as f64).log10();
    match mode {
        SpaceMode::Layerwise => l * (lw + lx),
        SpaceMode::Channelwise => l * lx + channels.iter().sum::<usize>() as f64 * lw,
    }
}

/// Output channels of each conv/fc layer of MobileNetV1 (standard + depthwise
/// + pointwise stack, 1000-way head replaced by `classes`) at a width multiplier.
pub fn mobilenet_v1_channels(width: f64, classes: usize) -> Vec<usize> {
    let c = |n: usize| ((n as f64 * width).round() as usize).max(1);
    let mut v = vec![c(32)];
    // (depthwise channels, pointwise output channels)
    let blocks = [
        (32, 64),
        (64, 128),
        (128, 128),
        (128, 256),
        (256, 256),
        (256, 512),
        (512, 512),
        (512, 512),
        (512, 512),
        (512, 512),
        (512, 512),
        (512, 1024),
        (1024, 1024),
    ];
    for (dw, pw) in blocks {
        v.push(c(dw));
        v.push(c(pw));
    }
    v.push(classes);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> PrecisionSet {
        PrecisionSet::default()
    }

    #[test]
    fn size_reg_one_hot_conv() {
        let geom = QuantGeometry {
            c_in: 16,
            c_out: 32,
            ky: 3,
            kx: 3,
            oh: 8,
            ow: 8,
        };
        let ctx = LayerCostContext::from(&geom);
        let gh: Vec<f64> = (0..32).flat_map(|_| [0.0, 0.0, 1.0]).collect();
        assert_eq!(size_reg(&ctx, &gh, &set()).unwrap(), 36864.0);
    }

    #[test]
    fn size_reg_uniform_rows_average_bits() {
        let ctx = LayerCostContext {
            omega: 1,
            weight_volume: 1,
            c_out: 1,
        };
        let third = 1.0 / 3.0;
        let v = size_reg(&ctx, &[third, third, third], &set()).unwrap();
        assert!((v - 14.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn exact_size_examples() {
        let geoms = [QuantGeometry::fc(128, 10)];
        let a = PrecisionAssignment {
            layers: vec![crate::gates::LayerAssignment::uniform(8, 8, 10)],
        };
        assert_eq!(exact_model_size(&geoms, &a).unwrap(), 10240);
        assert_eq!(exact_model_size(&[], &PrecisionAssignment::default()).unwrap(), 0);
    }

    #[test]
    fn lut_csv_parsing() {
        let csv = "px,pw,pj_per_mac\n2,2,0.1\n2,4,0.2\n4,2,0.3\n4,4,0.4\n";
        let lut = CostLut::from_csv_reader(csv.as_bytes()).unwrap();
        let s = PrecisionSet::new(vec![2, 4]).unwrap();
        assert_eq!(lut.table(&s, &s).unwrap(), vec![0.1, 0.2, 0.3, 0.4]);
        assert!(lut.validate(&set(), &set()).is_err());

        let dup = "px,pw,pj_per_mac\n2,2,0.1\n2,2,0.2\n";
        assert!(CostLut::from_csv_reader(dup.as_bytes()).is_err());
        let bad_header = "a,pw,pj_per_mac\n2,2,0.1\n";
        assert!(CostLut::from_csv_reader(bad_header.as_bytes()).is_err());
        let neg = "px,pw,pj_per_mac\n2,2,-0.1\n";
        assert!(CostLut::from_csv_reader(neg.as_bytes()).is_err());
        let round = CostLut::from_csv_reader(lut.to_csv().as_bytes()).unwrap();
        assert_eq!(round, lut);
    }

    #[test]
    fn single_channel_space() {
        let s = set();
        let a = count_search_space(&[1], &s, &s, SpaceMode::Layerwise);
        let b = count_search_space(&[1], &s, &s, SpaceMode::Channelwise);
        assert!((a - 9f64.log10()).abs() < 1e-12);
        assert!((b - 9f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn mobilenet_table_shape() {
        let ch = mobilenet_v1_channels(0.25, 2);
        assert_eq!(ch.len(), 28);
        assert_eq!(ch[0], 8);
        assert_eq!(ch[26], 256);
    }
}
