//! Affine fake quantization.
//!
//! A tensor `t` is mapped to `n`-bit codes as
//! `clamp(round((t - alpha) / eps), 0, 2^n - 1)` with
//! `eps = (beta - alpha) / (2^n - 1)`, and dequantized back as
//! `alpha + code * eps`. Rounding is half-away-from-zero. The top code
//! dequantizes to `beta` itself so the range endpoints are exactly
//! representable.
//!
//! Activations use an unsigned PACT quantizer on `[0, clip)` with one
//! learnable clip per layer. Weights use a symmetric per-output-channel
//! quantizer on `[-r_i, r_i]` with `r_i = max |W_i|` recomputed each call.
//! Backward rules are straight-through inside the clipping range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 8;

/// Lower bound applied to a PACT clip after every optimizer step.
pub const CLIP_FLOOR: f64 = 1e-3;

pub fn check_bits(bits: u8) -> Result<()> {
    if (MIN_BITS..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::UnsupportedPrecision(bits as u32))
    }
}

/// Largest code of an `n`-bit quantizer, `2^n - 1`.
#[inline]
pub fn max_code(bits: u8) -> u32 {
    (1u32 << bits) - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineQuantParams {
    bits: u8,
    alpha: f64,
    beta: f64,
    eps: f64,
}

impl AffineQuantParams {
    pub fn new(bits: u8, alpha: f64, beta: f64) -> Result<Self> {
        check_bits(bits)?;
        if !(beta > alpha) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidRange { alpha, beta });
        }
        let eps = (beta - alpha) / max_code(bits) as f64;
        if !(eps > 0.0) {
            return Err(Error::InvalidRange { alpha, beta });
        }
        Ok(Self { bits, alpha, beta, eps })
    }

    /// Symmetric range `[-r, r]` used for weight channels.
    pub fn symmetric(bits: u8, r: f64) -> Result<Self> {
        Self::new(bits, -r, r)
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    #[inline]
    pub fn code(&self, t: f64) -> u32 {
        let top = max_code(self.bits);
        let r = ((t - self.alpha) / self.eps).round();
        if r <= 0.0 {
            0
        } else if r >= top as f64 {
            top
        } else {
            r as u32
        }
    }

    #[inline]
    pub fn dequantize(&self, code: u32) -> f64 {
        if code >= max_code(self.bits) {
            self.beta
        } else {
            self.alpha + code as f64 * self.eps
        }
    }

    #[inline]
    pub fn fake(&self, t: f64) -> f64 {
        self.dequantize(self.code(t))
    }
}

pub fn affine_quantize(t: &Tensor, q: &AffineQuantParams) -> Vec<u32> {
    t.data().iter().map(|&v| q.code(v)).collect()
}

pub fn fake_quantize(t: &Tensor, q: &AffineQuantParams) -> Tensor {
    let data = t.data().iter().map(|&v| q.fake(v)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// Learnable activation clip of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PactActQuantizer {
    pub clip: f64,
}

impl Default for PactActQuantizer {
    fn default() -> Self {
        Self { clip: 6.0 }
    }
}

impl PactActQuantizer {
    pub fn params(&self, bits: u8) -> Result<AffineQuantParams> {
        AffineQuantParams::new(bits, 0.0, self.clip)
    }

    pub fn project(&mut self) {
        self.clip = self.clip.max(CLIP_FLOOR);
    }
}

/// PACT forward: fake quantization on `[0, clip)`.
pub fn pact_act_fakequant(x: &Tensor, clip: f64, bits: u8) -> Result<Tensor> {
    let q = PactActQuantizer { clip }.params(bits)?;
    Ok(fake_quantize(x, &q))
}

/// PACT backward. Returns `(dL/dx, dL/dclip)`.
///
/// `dout/dx = 1` for `0 <= x < clip`, else 0. `dout/dclip = 1` for `x >= clip`.
pub fn pact_backward(x: &[f64], clip: f64, grad_out: &[f64]) -> (Vec<f64>, f64) {
    let mut gclip = 0.0;
    let gx = x
        .iter()
        .zip(grad_out)
        .map(|(&v, &g)| {
            if v >= clip {
                gclip += g;
                0.0
            } else if v >= 0.0 {
                g
            } else {
                0.0
            }
        })
        .collect();
    (gx, gclip)
}

/// Per-channel symmetric range `r_i = max |W_i|` over the leading axis.
pub fn channel_ranges(w: &Tensor) -> Vec<f64> {
    let rows = w.shape().first().copied().unwrap_or(1);
    (0..rows)
        .map(|i| w.row(i).iter().fold(0.0_f64, |m, v| m.max(v.abs())))
        .collect()
}

/// Fake-quantizes one weight channel on `[-r, r]`. A zero range yields zeros.
pub fn fake_quantize_channel(row: &[f64], r: f64, bits: u8, out: &mut [f64]) -> Result<()> {
    if r == 0.0 {
        out.fill(0.0);
        return Ok(());
    }
    let q = AffineQuantParams::symmetric(bits, r)?;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = q.fake(v);
    }
    Ok(())
}

/// Per-output-channel weight fake quantization with one bit-width per channel.
pub fn weight_fakequant_channels(w: &Tensor, bits: &[u8]) -> Result<Tensor> {
    let rows = w.shape().first().copied().unwrap_or(1);
    if bits.len() != rows {
        return Err(Error::shape(
            "weight fake-quant",
            format!("{} bit-widths for {rows} channels", bits.len()),
        ));
    }
    let ranges = channel_ranges(w);
    let len = w.row_len();
    let mut out = vec![0.0; w.len()];
    for (i, (&b, &r)) in bits.iter().zip(&ranges).enumerate() {
        fake_quantize_channel(w.row(i), r, b, &mut out[i * len..(i + 1) * len])?;
    }
    Tensor::new(w.shape().to_vec(), out)
}

/// Per-output-channel weight fake quantization at a single bit-width.
pub fn weight_fakequant_per_channel(w: &Tensor, bits: u8) -> Result<Tensor> {
    let rows = w.shape().first().copied().unwrap_or(1);
    weight_fakequant_channels(w, &vec![bits; rows])
}

/// STE gradient of the weight quantizer: identity inside `[-r_i, r_i]`.
///
/// Since `r_i` is the channel max-abs every weight lies inside its range; the
/// mask is kept explicit so externally supplied ranges behave as specified.
pub fn weight_fakequant_backward(w: &Tensor, grad_out: &[f64]) -> Vec<f64> {
    let ranges = channel_ranges(w);
    let len = w.row_len();
    w.data()
        .iter()
        .zip(grad_out)
        .enumerate()
        .map(|(k, (&v, &g))| if v.abs() <= ranges[k / len.max(1)] { g } else { 0.0 })
        .collect()
}

/// Integer codes and ranges of one weight tensor, as consumed by integer kernels.
pub fn quantize_weight_codes(w: &Tensor, bits: &[u8]) -> Result<(Vec<u8>, Vec<f64>)> {
    let ranges = channel_ranges(w);
    let len = w.row_len();
    let mut codes = Vec::with_capacity(w.len());
    for (i, (&b, &r)) in bits.iter().zip(&ranges).enumerate() {
        check_bits(b)?;
        if r == 0.0 {
            codes.extend(std::iter::repeat_n(0u8, len));
            continue;
        }
        let q = AffineQuantParams::symmetric(b, r)?;
        codes.extend(w.row(i).iter().map(|&v| q.code(v) as u8));
    }
    Ok((codes, ranges))
}

/// Inverse of [`quantize_weight_codes`] for one channel.
pub fn dequantize_channel(codes: &[u8], r: f64, bits: u8) -> Result<Vec<f64>> {
    if r == 0.0 {
        return Ok(vec![0.0; codes.len()]);
    }
    let q = AffineQuantParams::symmetric(bits, r)?;
    Ok(codes.iter().map(|&c| q.dequantize(c as u32)).collect())
}
