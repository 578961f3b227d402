//! Property tests for the affine, PACT and per-channel weight quantizers.

use chanmix_core::quant::{
    channel_ranges, dequantize_channel, pact_act_fakequant, quantize_weight_codes, weight_fakequant_channels,
    AffineQuantParams,
};
use chanmix_core::Tensor;
use proptest::prelude::*;

fn bits() -> impl Strategy<Value = u8> {
    2u8..=8
}

fn range() -> impl Strategy<Value = (f64, f64)> {
    (-10.0..10.0f64, 1e-3..20.0f64).prop_map(|(a, w)| (a, a + w))
}

proptest! {
    #[test]
    fn fake_quant_is_idempotent(b in bits(), (lo, hi) in range(), t in -40.0..40.0f64) {
        let q = AffineQuantParams::new(b, lo, hi).unwrap();
        let once = q.fake(t);
        prop_assert_eq!(q.fake(once), once);
    }

    #[test]
    fn codes_are_monotone(b in bits(), (lo, hi) in range(), s in -40.0..40.0f64, d in 0.0..10.0f64) {
        let q = AffineQuantParams::new(b, lo, hi).unwrap();
        prop_assert!(q.code(s) <= q.code(s + d));
        prop_assert!(q.fake(s) <= q.fake(s + d));
    }

    #[test]
    fn in_range_error_is_half_a_step(b in bits(), (lo, hi) in range(), u in 0.0..=1.0f64) {
        let q = AffineQuantParams::new(b, lo, hi).unwrap();
        let t = lo + u * (hi - lo);
        let err = (q.fake(t) - t).abs();
        prop_assert!(err <= q.eps() / 2.0 * (1.0 + 1e-9) + 1e-12, "err {} eps {}", err, q.eps());
    }

    #[test]
    fn codes_stay_in_range(b in bits(), (lo, hi) in range(), t in -1e6..1e6f64) {
        let q = AffineQuantParams::new(b, lo, hi).unwrap();
        prop_assert!(q.code(t) < 1 << b);
        let v = q.fake(t);
        prop_assert!(v >= lo && v <= hi);
    }

    #[test]
    fn pact_output_is_clamped(clip in 1e-3..10.0f64, b in bits(), xs in prop::collection::vec(-20.0..20.0f64, 1..64)) {
        let x = Tensor::new(vec![xs.len()], xs).unwrap();
        let y = pact_act_fakequant(&x, clip, b).unwrap();
        prop_assert!(y.data().iter().all(|&v| (0.0..=clip).contains(&v)));
    }

    #[test]
    fn weight_codes_round_trip(
        rows in 1usize..6,
        cols in 1usize..10,
        seed in prop::collection::vec(-3.0..3.0f64, 60),
        b in bits(),
    ) {
        let w = Tensor::new(vec![rows, cols], seed[..rows * cols].to_vec()).unwrap();
        let widths = vec![b; rows];
        let (codes, ranges) = quantize_weight_codes(&w, &widths).unwrap();
        let fake = weight_fakequant_channels(&w, &widths).unwrap();
        for i in 0..rows {
            let back = dequantize_channel(&codes[i * cols..(i + 1) * cols], ranges[i], b).unwrap();
            prop_assert_eq!(back.as_slice(), fake.row(i));
        }
    }

    #[test]
    fn channels_are_independent(
        a in prop::collection::vec(-3.0..3.0f64, 8),
        c in prop::collection::vec(-3.0..3.0f64, 8),
        c2 in prop::collection::vec(-3.0..3.0f64, 8),
        b0 in bits(),
        b1 in bits(),
    ) {
        let w1 = Tensor::new(vec![2, 8], [a.clone(), c].concat()).unwrap();
        let w2 = Tensor::new(vec![2, 8], [a, c2].concat()).unwrap();
        let q1 = weight_fakequant_channels(&w1, &[b0, b1]).unwrap();
        let q2 = weight_fakequant_channels(&w2, &[b0, b1]).unwrap();
        prop_assert_eq!(q1.row(0), q2.row(0));
    }
}

#[test]
fn more_bits_never_hurt_on_average() {
    let w: Vec<f64> = (0..4096).map(|i| ((i as f64) * 0.7548776662).fract() * 2.0 - 1.0).collect();
    let t = Tensor::new(vec![8, 512], w).unwrap();
    let mse = |b: u8| {
        let q = weight_fakequant_channels(&t, &[b; 8]).unwrap();
        q.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.len() as f64
    };
    let errs: Vec<f64> = [2, 4, 8].iter().map(|&b| mse(b)).collect();
    assert!(errs[2] <= errs[1] && errs[1] <= errs[0], "{errs:?}");
}

#[test]
fn weight_range_is_channel_max_abs() {
    let w = Tensor::new(vec![2, 3], vec![0.5, -2.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(channel_ranges(&w), vec![2.0, 0.0]);
    let q = weight_fakequant_channels(&w, &[2, 8]).unwrap();
    // the extreme weight is representable exactly, an all-zero channel stays zero
    assert_eq!(q.row(0)[1], -2.0);
    assert_eq!(q.row(1), &[0.0, 0.0, 0.0]);
}

#[test]
fn rejects_unsupported_widths() {
    assert!(AffineQuantParams::new(1, 0.0, 1.0).is_err());
    assert!(AffineQuantParams::new(9, 0.0, 1.0).is_err());
    assert!(AffineQuantParams::new(4, 1.0, 1.0).is_err());
}
