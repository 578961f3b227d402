//! Forward and backward kernels for the dense layers.
//!
//! Layouts: activations are `[N, C, H, W]` (conv) or `[N, F]` (fc); conv
//! weights are `[C_out, C_in, K_y, K_x]`, fc weights `[F_out, F_in]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
}

/// Dimensions of one conv2d call, derived from the operand shapes.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub ky: usize,
    pub kx: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
}

pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

impl ConvDims {
    pub fn infer(x: &Tensor, w: &Tensor, p: ConvParams, context: &str) -> Result<Self> {
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(
                context,
                format!("conv2d expects 4-d input and weight, got {xs:?} and {ws:?}"),
            ));
        }
        if xs[1] != ws[1] {
            return Err(Error::shape(
                context,
                format!("input has {} channels, weight expects {}", xs[1], ws[1]),
            ));
        }
        let oh = conv_output_extent(xs[2], ws[2], p.stride, p.padding);
        let ow = conv_output_extent(xs[3], ws[3], p.stride, p.padding);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::shape(
                context,
                format!("kernel {:?} does not fit input {:?}", &ws[2..], &xs[2..]),
            ));
        };
        Ok(Self {
            n: xs[0],
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ws[0],
            ky: ws[2],
            kx: ws[3],
            oh,
            ow,
            stride: p.stride,
            pad: p.padding,
        })
    }

    /// Input coordinate touched by output position `o` and kernel tap `k`.
    #[inline]
    pub fn input_coord(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

fn check_bias(bias: Option<&Tensor>, channels: usize, context: &str) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != channels {
            return Err(Error::shape(
                context,
                format!("bias has {} entries, expected {channels}", b.len()),
            ));
        }
    }
    Ok(())
}

pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    p: ConvParams,
    context: &str,
) -> Result<Tensor> {
    let d = ConvDims::infer(x, w, p, context)?;
    check_bias(bias, d.c_out, context)?;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; d.n * d.c_out * d.oh * d.ow];
    let in_plane = d.h * d.w;
    let k_plane = d.ky * d.kx;
    for n in 0..d.n {
        for o in 0..d.c_out {
            let b = bias.map_or(0.0, |b| b.data()[o]);
            let out_base = (n * d.c_out + o) * d.oh * d.ow;
            for oy in 0..d.oh {
                for ox in 0..d.ow {
                    let mut acc = 0.0;
                    for c in 0..d.c_in {
                        let x_base = (n * d.c_in + c) * in_plane;
                        let w_base = (o * d.c_in + c) * k_plane;
                        for ky in 0..d.ky {
                            let Some(iy) = d.input_coord(oy, ky, d.h) else {
                                continue;
                            };
                            for kx in 0..d.kx {
                                let Some(ix) = d.input_coord(ox, kx, d.w) else {
                                    continue;
                                };
                                acc += xd[x_base + iy * d.w + ix] * wd[w_base + ky * d.kx + kx];
                            }
                        }
                    }
                    out[out_base + oy * d.ow + ox] = acc + b;
                }
            }
        }
    }
    Tensor::new(vec![d.n, d.c_out, d.oh, d.ow], out)
}

/// Gradients of conv2d with respect to input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &[f64],
    p: ConvParams,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let d = ConvDims::infer(x, w, p, "conv2d backward")?;
    let (xd, wd) = (x.data(), w.data());
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; d.c_out];
    let in_plane = d.h * d.w;
    let k_plane = d.ky * d.kx;
    for n in 0..d.n {
        for o in 0..d.c_out {
            let out_base = (n * d.c_out + o) * d.oh * d.ow;
            for oy in 0..d.oh {
                for ox in 0..d.ow {
                    let g = grad_out[out_base + oy * d.ow + ox];
                    gb[o] += g;
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..d.c_in {
                        let x_base = (n * d.c_in + c) * in_plane;
                        let w_base = (o * d.c_in + c) * k_plane;
                        for ky in 0..d.ky {
                            let Some(iy) = d.input_coord(oy, ky, d.h) else {
                                continue;
                            };
                            for kx in 0..d.kx {
                                let Some(ix) = d.input_coord(ox, kx, d.w) else {
                                    continue;
                                };
                                let xi = x_base + iy * d.w + ix;
                                let wi = w_base + ky * d.kx + kx;
                                gx[xi] += g * wd[wi];
                                gw[wi] += g * xd[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((gx, gw, gb))
}

fn fc_dims(x: &Tensor, w: &Tensor, context: &str) -> Result<(usize, usize, usize)> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
        return Err(Error::shape(
            context,
            format!("fc expects [N, F_in] x [F_out, F_in], got {xs:?} and {ws:?}"),
        ));
    }
    Ok((xs[0], ws[1], ws[0]))
}

pub fn fc_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, context: &str) -> Result<Tensor> {
    let (n, f_in, f_out) = fc_dims(x, w, context)?;
    check_bias(bias, f_out, context)?;
    let mut out = vec![0.0; n * f_out];
    for i in 0..n {
        let xr = &x.data()[i * f_in..(i + 1) * f_in];
        for o in 0..f_out {
            let wr = &w.data()[o * f_in..(o + 1) * f_in];
            let acc: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            out[i * f_out + o] = acc + bias.map_or(0.0, |b| b.data()[o]);
        }
    }
    Tensor::new(vec![n, f_out], out)
}

pub fn fc_backward(x: &Tensor, w: &Tensor, grad_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (n, f_in, f_out) = fc_dims(x, w, "fc backward")?;
    let (xd, wd) = (x.data(), w.data());
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; f_out];
    for i in 0..n {
        let xr = &xd[i * f_in..(i + 1) * f_in];
        let gxr = &mut gx[i * f_in..(i + 1) * f_in];
        for o in 0..f_out {
            let g = grad_out[i * f_out + o];
            gb[o] += g;
            if g == 0.0 {
                continue;
            }
            let wr = &wd[o * f_in..(o + 1) * f_in];
            let gwr = &mut gw[o * f_in..(o + 1) * f_in];
            for f in 0..f_in {
                gxr[f] += g * wr[f];
                gwr[f] += g * xr[f];
            }
        }
    }
    Ok((gx, gw, gb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

/// Non-overlapping `window x window` pooling over `[N, C, H, W]`.
///
/// Returns the pooled tensor and, for max pooling, the flat input index that
/// won each window.
pub fn pool_forward(x: &Tensor, window: usize, kind: PoolKind) -> Result<(Tensor, Vec<usize>)> {
    let s = x.shape();
    if s.len() != 4 || window == 0 || s[2] < window || s[3] < window {
        return Err(Error::shape(
            "pool",
            format!("window {window} incompatible with input {s:?}"),
        ));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / window, w / window);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut winners = Vec::new();
    let area = (window * window) as f64;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = 0.0;
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = base + (oy * window + ky) * w + ox * window + kx;
                        let v = x.data()[idx];
                        sum += v;
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                match kind {
                    PoolKind::Avg => out.push(sum / area),
                    PoolKind::Max => {
                        out.push(best);
                        winners.push(best_idx);
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, winners))
}

pub fn pool_backward(
    input_shape: &[usize],
    window: usize,
    kind: PoolKind,
    winners: &[usize],
    grad_out: &[f64],
) -> Vec<f64> {
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (oh, ow) = (h / window, w / window);
    let mut gx = vec![0.0; n * c * h * w];
    match kind {
        PoolKind::Max => {
            for (g, &idx) in grad_out.iter().zip(winners) {
                gx[idx] += g;
            }
        }
        PoolKind::Avg => {
            let area = (window * window) as f64;
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = grad_out[(plane * oh + oy) * ow + ox] / area;
                        for ky in 0..window {
                            for kx in 0..window {
                                gx[base + (oy * window + ky) * w + ox * window + kx] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_of_ones_sums_window() {
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let y = conv2d_forward(&x, &w, None, ConvParams { stride: 1, padding: 0 }, "t").unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn centered_delta_kernel_is_identity() {
        let x = Tensor::new(vec![1, 1, 3, 4], (0..12).map(|v| v as f64 * 0.5 - 2.0).collect()).unwrap();
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let y = conv2d_forward(&x, &k, None, ConvParams { stride: 1, padding: 1 }, "t").unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_reports_channel_mismatch() {
        let x = Tensor::ones(&[1, 2, 3, 3]);
        let w = Tensor::ones(&[1, 3, 3, 3]);
        let err = conv2d_forward(&x, &w, None, ConvParams { stride: 1, padding: 0 }, "layer 4").unwrap_err();
        assert!(err.to_string().contains("layer 4"));
    }

    #[test]
    fn fc_hand_examples() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(fc_forward(&x, &eye, None, "t").unwrap().data(), &[1.0, 2.0]);

        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let w = Tensor::new(vec![1, 2], vec![2.0, 3.0]).unwrap();
        let b = Tensor::from_vec(vec![1.0]);
        assert_eq!(fc_forward(&x, &w, Some(&b), "t").unwrap().data(), &[6.0]);
    }

    #[test]
    fn avgpool_is_window_mean() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = pool_forward(&x, 2, PoolKind::Avg).unwrap();
        assert_eq!(y.data(), &[2.5]);
        let (y, win) = pool_forward(&x, 2, PoolKind::Max).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(win, vec![3]);
    }

    #[test]
    fn output_extent_formula() {
        assert_eq!(conv_output_extent(8, 3, 1, 0), Some(6));
        assert_eq!(conv_output_extent(8, 3, 2, 1), Some(4));
        assert_eq!(conv_output_extent(2, 3, 1, 0), None);
    }
}
