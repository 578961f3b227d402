use chanmix_bench::tensor;
use chanmix_core::model::{Precision, Trainable};
use chanmix_core::{Architecture, LayerSpec, Model, SearchSpace};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn small_cnn() -> Architecture {
    Architecture {
        input_shape: vec![3, 16, 16],
        layers: vec![
            LayerSpec::conv(3, 16, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::conv(16, 16, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::AvgPool { window: 4 },
            LayerSpec::Flatten,
            LayerSpec::fc(16 * 16, 10),
        ],
    }
}

fn mixed_precision(c: &mut Criterion) {
    let model = Model::init(small_cnn(), SearchSpace::default(), 2.0, 0).unwrap();
    let x = tensor(&[8, 3, 16, 16], 5);
    let asg = model.discretize(1.0).unwrap();
    let mut g = c.benchmark_group("model");
    g.sample_size(20);
    g.bench_function("search_forward_backward", |b| {
        b.iter(|| {
            let mut pass = model
                .forward(black_box(&x), Precision::Search { tau: 5.0 }, Trainable::ALL)
                .unwrap();
            let loss = pass.graph.sum(pass.output).unwrap();
            pass.graph.backward(loss).unwrap()
        })
    });
    g.bench_function("discrete_forward", |b| {
        b.iter(|| model.predict(black_box(&x), Precision::Discrete(&asg)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, mixed_precision);
criterion_main!(benches);
