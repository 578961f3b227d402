use chanmix_bench::tensor;
use chanmix_core::kernels::{conv2d_backward, conv2d_forward, ConvParams};
use chanmix_core::quant::{pact_act_fakequant, weight_fakequant_channels};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    let p = ConvParams { stride: 1, padding: 1 };
    for ch in [8usize, 16, 32] {
        let x = tensor(&[8, ch, 16, 16], 1);
        let w = tensor(&[ch, ch, 3, 3], 2);
        g.bench_with_input(BenchmarkId::new("forward", ch), &ch, |b, _| {
            b.iter(|| conv2d_forward(black_box(&x), black_box(&w), None, p, "bench").unwrap())
        });
        let y = conv2d_forward(&x, &w, None, p, "bench").unwrap();
        let gy = vec![1.0; y.len()];
        g.bench_with_input(BenchmarkId::new("backward", ch), &ch, |b, _| {
            b.iter(|| conv2d_backward(black_box(&x), black_box(&w), &gy, p).unwrap())
        });
    }
    g.finish();
}

fn fake_quant(c: &mut Criterion) {
    let mut g = c.benchmark_group("fake_quant");
    let x = tensor(&[64, 32, 8, 8], 3);
    let w = tensor(&[64, 32, 3, 3], 4);
    for bits in [2u8, 4, 8] {
        g.bench_with_input(BenchmarkId::new("pact", bits), &bits, |b, &bits| {
            b.iter(|| pact_act_fakequant(black_box(&x), 1.0, bits).unwrap())
        });
        let widths = vec![bits; 64];
        g.bench_with_input(BenchmarkId::new("weights", bits), &bits, |b, _| {
            b.iter(|| weight_fakequant_channels(black_box(&w), &widths).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, conv, fake_quant);
criterion_main!(benches);
