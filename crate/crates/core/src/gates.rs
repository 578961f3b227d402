//! Differentiable precision selection.
//!
//! Each searchable layer owns a vector of activation gate logits (one per
//! activation precision) and a `C_out x |P_W|` matrix of weight gate logits
//! (one row per output channel). Gates are turned into mixing coefficients by
//! a softmax with a shared temperature, the fake-quantized copies are blended
//! with them, and the temperature is annealed every search epoch. After the
//! search each row is discretized with an argmax.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::ConvParams;
use crate::quant::check_bits;
use crate::tensor::Tensor;

/// Initial softmax temperature of the search phase.
pub const TAU_INIT: f64 = 5.0;
/// Per-epoch annealing exponent: `tau <- tau * exp(-ANNEAL_RATE)`.
pub const ANNEAL_RATE: f64 = 0.0045;

/// An ordered set of supported bit-widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct PrecisionSet(Vec<u8>);

impl PrecisionSet {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Config("precision set is empty".into()));
        }
        for &b in &bits {
            check_bits(b)?;
        }
        if bits.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "precision set {bits:?} must be strictly increasing"
            )));
        }
        Ok(Self(bits))
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> u8 {
        *self.0.last().expect("non-empty")
    }

    pub fn min(&self) -> u8 {
        self.0[0]
    }

    pub fn contains(&self, bits: u8) -> bool {
        self.0.contains(&bits)
    }

    pub fn index_of(&self, bits: u8) -> Option<usize> {
        self.0.iter().position(|&b| b == bits)
    }
}

impl Default for PrecisionSet {
    fn default() -> Self {
        Self(vec![2, 4, 8])
    }
}

impl TryFrom<Vec<u8>> for PrecisionSet {
    type Error = Error;
    fn try_from(v: Vec<u8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PrecisionSet> for Vec<u8> {
    fn from(p: PrecisionSet) -> Self {
        p.0
    }
}

/// `exp(v_i / tau) / sum_j exp(v_j / tau)`, evaluated max-subtracted.
pub fn softmax_temperature(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidTemperature(tau));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|&x| ((x - m) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / s).collect())
}

/// One annealing step.
pub fn anneal(tau: f64, rate: f64) -> f64 {
    tau * (-rate).exp()
}

/// Index of the largest entry; ties resolve to the lowest index (lowest bit-width).
pub fn argmax_lowest(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// NAS parameters of one quantized layer.
///
/// `delta == None` means the activation precision is not searched (fixed at
/// the set maximum); likewise for `gamma`. A `gamma` with a single row while
/// the layer has more channels is a tied (layer-wise) gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGates {
    pub delta: Option<Vec<f64>>,
    pub gamma: Option<Tensor>,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateState {
    pub layers: Vec<LayerGates>,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerAssignment {
    pub act_bits: u8,
    pub weight_bits: Vec<u8>,
}

impl LayerAssignment {
    pub fn uniform(act_bits: u8, weight_bits: u8, channels: usize) -> Self {
        Self {
            act_bits,
            weight_bits: vec![weight_bits; channels],
        }
    }

    /// `(bits, channel count)` pairs in ascending bit order, empty groups skipped.
    pub fn histogram(&self) -> Vec<(u8, usize)> {
        let mut h: Vec<(u8, usize)> = Vec::new();
        let mut sorted = self.weight_bits.clone();
        sorted.sort_unstable();
        for b in sorted {
            match h.last_mut() {
                Some((lb, n)) if *lb == b => *n += 1,
                _ => h.push((b, 1)),
            }
        }
        h
    }
}

/// Discrete bit-widths for every quantized layer, in layer order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PrecisionAssignment {
    pub layers: Vec<LayerAssignment>,
}

impl PrecisionAssignment {
    pub fn validate(&self, act_set: &PrecisionSet, weight_set: &PrecisionSet) -> Result<()> {
        for (n, l) in self.layers.iter().enumerate() {
            if !act_set.contains(l.act_bits) {
                return Err(Error::Config(format!(
                    "layer {n}: activation bits {} not in {:?}",
                    l.act_bits,
                    act_set.bits()
                )));
            }
            if let Some(b) = l.weight_bits.iter().find(|b| !weight_set.contains(**b)) {
                return Err(Error::Config(format!(
                    "layer {n}: weight bits {b} not in {:?}",
                    weight_set.bits()
                )));
            }
        }
        Ok(())
    }

    /// Fraction of all output channels assigned `bits`.
    pub fn channel_fraction(&self, bits: u8) -> f64 {
        let total: usize = self.layers.iter().map(|l| l.weight_bits.len()).sum();
        let hit: usize = self
            .layers
            .iter()
            .map(|l| l.weight_bits.iter().filter(|&&b| b == bits).count())
            .sum();
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

/// Argmax discretization of every gate row.
pub fn discretize(state: &GateState, act_set: &PrecisionSet, weight_set: &PrecisionSet) -> Result<PrecisionAssignment> {
    let mut layers = Vec::with_capacity(state.layers.len());
    for g in &state.layers {
        let act_bits = match &g.delta {
            Some(d) => act_set.bits()[argmax_lowest(&softmax_temperature(d, state.tau)?)],
            None => act_set.max(),
        };
        let weight_bits = match &g.gamma {
            Some(gamma) => {
                let k = weight_set.len();
                let rows: Vec<u8> = gamma
                    .data()
                    .chunks(k)
                    .map(|r| softmax_temperature(r, state.tau).map(|p| weight_set.bits()[argmax_lowest(&p)]))
                    .collect::<Result<_>>()?;
                if rows.len() == 1 && g.channels > 1 {
                    vec![rows[0]; g.channels]
                } else {
                    rows
                }
            }
            None => vec![weight_set.max(); g.channels],
        };
        layers.push(LayerAssignment { act_bits, weight_bits });
    }
    Ok(PrecisionAssignment { layers })
}

/// How the input activation of a quantized layer is formed.
#[derive(Debug, Clone, Copy)]
pub enum ActMode<'a> {
    Fixed(u8),
    Gated {
        delta: Var,
        tau: f64,
        set: &'a PrecisionSet,
    },
}

/// How the weight of a quantized layer is formed.
#[derive(Debug, Clone)]
pub enum WeightMode<'a> {
    /// One bit-width per output channel.
    Fixed(Vec<u8>),
    Gated {
        gamma: Var,
        tau: f64,
        set: &'a PrecisionSet,
    },
}

/// `X_hat = sum_p softmax(delta / tau)_p * pact(X, clip, p)`.
pub fn effective_activations(
    g: &mut Graph,
    x: Var,
    delta: Var,
    tau: f64,
    set: &PrecisionSet,
    clip: Var,
) -> Result<Var> {
    let coeffs = g.softmax(delta, tau)?;
    let copies = set
        .bits()
        .iter()
        .map(|&b| g.pact(x, clip, b))
        .collect::<Result<Vec<_>>>()?;
    g.blend(&copies, coeffs)
}

/// Stack over channels of `W_hat_i = sum_p softmax(gamma_i / tau)_p * W_{i,p}`.
///
/// A single-row `gamma` is shared by every channel (tied, layer-wise gates).
pub fn effective_weights(g: &mut Graph, w: Var, gamma: Var, tau: f64, set: &PrecisionSet) -> Result<Var> {
    let channels = g.value(w).shape().first().copied().unwrap_or(1);
    let rows = g.value(gamma).shape().first().copied().unwrap_or(1);
    let mut coeffs = g.softmax(gamma, tau)?;
    if rows == 1 && channels > 1 {
        coeffs = g.broadcast_rows(coeffs, channels)?;
    } else if rows != channels {
        return Err(Error::shape(
            "effective_weights",
            format!("{rows} gate rows for {channels} channels"),
        ));
    }
    let copies = set
        .bits()
        .iter()
        .map(|&b| g.weight_quant(w, &vec![b; channels]))
        .collect::<Result<Vec<_>>>()?;
    g.blend_channels(&copies, coeffs)
}

/// The linear operator of a quantized layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearKind {
    Conv(ConvParams),
    Fc,
}

/// `Y = Conv(X_hat, stack_i W_hat_i)` (or the fc analog).
#[allow(clippy::too_many_arguments)]
pub fn mixedprec_layer_forward(
    g: &mut Graph,
    kind: LinearKind,
    x: Var,
    w: Var,
    bias: Option<Var>,
    clip: Var,
    act: ActMode<'_>,
    weight: &WeightMode<'_>,
    context: &str,
) -> Result<Var> {
    let x_hat = match act {
        ActMode::Fixed(b) => g.pact(x, clip, b)?,
        ActMode::Gated { delta, tau, set } => effective_activations(g, x, delta, tau, set, clip)?,
    };
    let w_hat = match weight {
        WeightMode::Fixed(bits) => g.weight_quant(w, bits)?,
        WeightMode::Gated { gamma, tau, set } => effective_weights(g, w, *gamma, *tau, set)?,
    };
    match kind {
        LinearKind::Conv(p) => g.conv2d(x_hat, w_hat, bias, p, context),
        LinearKind::Fc => g.fc(x_hat, w_hat, bias, context),
    }
}
