//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use chanmix_core::gates::PrecisionSet;
use chanmix_core::model::{Architecture, LayerSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Max-norm relative error between an analytic and a numeric gradient.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1e-10);
    diff / scale
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(1.0);
            p[i] = x[i] + step;
            let up = f(&p);
            p[i] = x[i] - step;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Ranks with ties sharing their average rank (1-based).
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of the ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

pub fn random_bits(rng: &mut ChaCha8Rng, set: &PrecisionSet, n: usize) -> Vec<u8> {
    (0..n).map(|_| set.bits()[rng.gen_range(0..set.len())]).collect()
}

/// A random small network: plain MLP, CNN with pooling, or CNN with a residual link.
pub fn random_arch(rng: &mut ChaCha8Rng) -> Architecture {
    match rng.gen_range(0..3) {
        0 => {
            let depth = rng.gen_range(2..=4);
            let mut widths = vec![rng.gen_range(2..=6)];
            for _ in 0..depth {
                widths.push(rng.gen_range(2..=9));
            }
            Architecture::mlp(&widths)
        }
        1 => {
            let c0 = rng.gen_range(1..=3);
            let c1 = rng.gen_range(2..=6);
            let c2 = rng.gen_range(2..=6);
            let classes = rng.gen_range(2..=4);
            Architecture {
                input_shape: vec![c0, 6, 6],
                layers: vec![
                    LayerSpec::conv(c0, c1, 3, 1, 1),
                    LayerSpec::Relu,
                    LayerSpec::MaxPool { window: 2 },
                    LayerSpec::conv(c1, c2, 3, 1, 0),
                    LayerSpec::Relu,
                    LayerSpec::Flatten,
                    LayerSpec::fc(c2, classes),
                ],
            }
        }
        _ => {
            let c0 = rng.gen_range(1..=3);
            let c1 = rng.gen_range(2..=5);
            let classes = rng.gen_range(2..=4);
            Architecture {
                input_shape: vec![c0, 4, 4],
                layers: vec![
                    LayerSpec::conv(c0, c1, 3, 1, 1),
                    LayerSpec::Relu,
                    LayerSpec::conv(c1, c1, 3, 1, 1),
                    LayerSpec::Relu,
                    LayerSpec::Add { from: 1 },
                    LayerSpec::conv(c1, c1, 1, 1, 0),
                    LayerSpec::Relu,
                    LayerSpec::AvgPool { window: 2 },
                    LayerSpec::Flatten,
                    LayerSpec::fc(c1 * 4, classes),
                ],
            }
        }
    }
}
