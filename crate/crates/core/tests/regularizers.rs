//! Cost models against formulas written out from scratch.

mod common;

use chanmix_core::cost::{exact_model_energy_pj, exact_model_size, total_reg, CostLut, RegMode};
use chanmix_core::gates::{LayerAssignment, PrecisionAssignment, PrecisionSet};
use chanmix_core::model::{Model, SearchSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn softmax(v: &[f64], tau: f64) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| ((x - m) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn random_gated_model(rng: &mut ChaCha8Rng, search_activations: bool) -> Model {
    let space = SearchSpace {
        search_activations,
        ..SearchSpace::default()
    };
    let mut model = Model::init(common::random_arch(rng), space, 2.0, rng.gen()).unwrap();
    for l in &mut model.params.layers {
        for g in [l.delta.as_mut(), l.gamma.as_mut()].into_iter().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
        }
    }
    model
}

fn lut(rng: &mut ChaCha8Rng, set: &PrecisionSet) -> CostLut {
    let entries: Vec<_> = set
        .bits()
        .iter()
        .flat_map(|&a| set.bits().iter().map(move |&w| (a, w)))
        .map(|k| (k, rng.gen_range(0.05..2.0)))
        .collect();
    CostLut::from_entries(entries).unwrap()
}

#[test]
fn soft_size_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let model = random_gated_model(&mut rng, false);
        let set = model.space.weight_set.clone();
        let tau = rng.gen_range(0.3..5.0);
        let geoms = model.arch.quant_geometries().unwrap();
        let mut want = 0.0;
        for (geom, l) in geoms.iter().zip(&model.params.layers) {
            let gamma = l.gamma.as_ref().unwrap();
            let k = set.len();
            let per_row: f64 = gamma
                .data()
                .chunks(k)
                .map(|r| softmax(r, tau).iter().zip(set.bits()).map(|(g, &b)| g * b as f64).sum::<f64>())
                .sum();
            // a single tied row stands for every channel
            let rows = gamma.len() / k;
            let scale = if rows == 1 { geom.c_out as f64 } else { 1.0 };
            want += (geom.c_in * geom.ky * geom.kx) as f64 * per_row * scale;
        }
        let got = total_reg(&geoms, &model.gate_state(tau), RegMode::Size, None, &set, &set).unwrap();
        assert!((got - want).abs() <= 1e-10 * want, "{got} vs {want}");
    }
}

#[test]
fn soft_energy_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..30 {
        let model = random_gated_model(&mut rng, true);
        let set = model.space.weight_set.clone();
        let table = lut(&mut rng, &set);
        let tau = rng.gen_range(0.3..5.0);
        let geoms = model.arch.quant_geometries().unwrap();
        let mut want = 0.0;
        for (geom, l) in geoms.iter().zip(&model.params.layers) {
            let k = set.len();
            let d = softmax(l.delta.as_ref().unwrap().data(), tau);
            let rows: Vec<Vec<f64>> = l.gamma.as_ref().unwrap().data().chunks(k).map(|r| softmax(r, tau)).collect();
            let mut e = 0.0;
            for (ai, &a) in set.bits().iter().enumerate() {
                let mut mean = 0.0;
                for row in &rows {
                    for (bi, &b) in set.bits().iter().enumerate() {
                        mean += row[bi] * table.get(a, b).unwrap();
                    }
                }
                e += d[ai] * mean / rows.len() as f64;
            }
            want += geom.macs() as f64 * e;
        }
        let got = total_reg(&geoms, &model.gate_state(tau), RegMode::Energy, Some(&table), &set, &set).unwrap();
        assert!((got - want).abs() <= 1e-10 * want, "{got} vs {want}");
    }
}

#[test]
fn exact_costs_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let set = PrecisionSet::new(vec![2, 4, 8]).unwrap();
    for _ in 0..30 {
        let model = random_gated_model(&mut rng, true);
        let table = lut(&mut rng, &set);
        let geoms = model.arch.quant_geometries().unwrap();
        let asg = PrecisionAssignment {
            layers: geoms
                .iter()
                .map(|g| LayerAssignment {
                    act_bits: set.bits()[rng.gen_range(0..3)],
                    weight_bits: common::random_bits(&mut rng, &set, g.c_out),
                })
                .collect(),
        };
        let mut size = 0u64;
        let mut energy = 0.0;
        for (g, l) in geoms.iter().zip(&asg.layers) {
            let vol = (g.c_in * g.ky * g.kx) as u64;
            size += l.weight_bits.iter().map(|&b| vol * b as u64).sum::<u64>();
            let per_channel_macs = (g.c_in * g.ky * g.kx * g.oh * g.ow) as f64;
            energy += l
                .weight_bits
                .iter()
                .map(|&b| per_channel_macs * table.get(l.act_bits, b).unwrap())
                .sum::<f64>();
        }
        assert_eq!(exact_model_size(&geoms, &asg).unwrap(), size);
        let got = exact_model_energy_pj(&geoms, &asg, &table, &set).unwrap();
        assert!((got - energy).abs() <= 1e-10 * energy, "{got} vs {energy}");
    }
}

#[test]
fn energy_requires_a_table() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let model = random_gated_model(&mut rng, true);
    let set = model.space.weight_set.clone();
    let geoms = model.arch.quant_geometries().unwrap();
    assert!(total_reg(&geoms, &model.gate_state(1.0), RegMode::Energy, None, &set, &set).is_err());
}
