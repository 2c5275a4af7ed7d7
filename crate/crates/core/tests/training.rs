//! End-to-end training checks on synthetic data. Each trains small models
//! for a few seconds.

use aliad_core::data::{gen_synthetic, Dataset, SyntheticSpec};
use aliad_core::eval::{macro_f1, subset_sweep, Classifier};
use aliad_core::model::{train, AliAdConfig};
use aliad_core::nn::{Adam, Mlp, Module};
use aliad_core::rng::seeded;
use aliad_core::Tensor;

const SEEDS: [u64; 3] = [0, 1, 2];

fn config(seed: u64) -> AliAdConfig {
    AliAdConfig {
        seed,
        augment: false,
        ..AliAdConfig::desk_scale()
    }
}

fn accuracy(pred: &[usize], ds: &Dataset) -> f64 {
    let hits = pred
        .iter()
        .zip(&ds.labels)
        .filter(|(p, y)| Some(**p) == **y)
        .count();
    hits as f64 / pred.len() as f64
}

/// Two-layer MLP on the flattened windows of view 0.
fn mlp_baseline_accuracy(ds: &Dataset, seed: u64) -> f64 {
    let len = ds.sample_len(0);
    let n = ds.num_samples();
    let x = Tensor::from_vec(ds.data[0].clone(), &[n, len]).unwrap();
    let y: Vec<usize> = ds.labels.iter().map(|l| l.unwrap()).collect();
    let mut mlp = Mlp::new("baseline", len, 32, ds.num_classes, &mut seeded(seed));
    let mut adam = Adam::new(1e-3);
    for _ in 0..20 {
        for rows in (0..n).collect::<Vec<_>>().chunks(16) {
            let xb = x.index_select(0, rows).unwrap();
            let yb: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
            let loss = mlp.forward(&xb).unwrap().cross_entropy(&yb).unwrap().mean();
            let grads = loss.backward().unwrap();
            adam.step(&mut mlp, &grads).unwrap();
        }
    }
    let logits = mlp.forward(&x).unwrap();
    let m = ds.num_classes;
    let pred: Vec<usize> = logits
        .data()
        .chunks(m)
        .map(|r| (0..m).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap())
        .collect();
    accuracy(&pred, ds)
}

#[test]
fn separable_data_is_fit_within_twenty_epochs() {
    for seed in SEEDS {
        let mut spec = SyntheticSpec::inertial(3, 4, 50.0, seed);
        spec.samples_per_class = 100;
        let ds = gen_synthetic(&spec).unwrap();
        let baseline = mlp_baseline_accuracy(&ds, seed);
        assert!(baseline > 0.95, "seed {seed}: baseline {baseline}");

        let out = train(&ds, None, None, &config(seed)).unwrap();
        assert_eq!(out.report.epochs.len(), 20);
        let pred = out.model.predict(&ds.full_batch(), &[0, 1, 2]).unwrap();
        let acc = accuracy(&pred, &ds);
        assert!(acc > 0.95, "seed {seed}: accuracy {acc}");
    }
}

#[test]
fn contrastive_loss_falls_and_view_weights_converge() {
    for seed in SEEDS {
        let mut spec = SyntheticSpec::inertial(3, 4, 4.0, seed);
        spec.samples_per_class = 40;
        let ds = gen_synthetic(&spec).unwrap();
        let cfg = AliAdConfig {
            share_encoders: false,
            ..config(seed)
        };
        let log = train(&ds, None, None, &cfg).unwrap().report.epochs;
        let (first, last) = (&log[0], &log[19]);
        assert!(last.l_ac.unwrap() < first.l_ac.unwrap(), "seed {seed}");
        let spread = |w: &[f64]| {
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt()
        };
        assert!(
            spread(&last.w_mean) < spread(&first.w_mean),
            "seed {seed}: {:?} -> {:?}",
            first.w_mean,
            last.w_mean
        );
    }
}

fn skewed(seed: u64) -> Vec<Dataset> {
    let mut spec = SyntheticSpec::inertial(3, 4, 1.0, seed);
    spec.samples_per_class = 60;
    spec.snr = vec![30.0, 3.0, 0.3];
    gen_synthetic(&spec).unwrap().split(&[0.7], seed)
}

#[test]
fn quality_ordering_shows_in_weights_and_single_view_scores() {
    for seed in SEEDS {
        let parts = skewed(seed);
        let out = train(&parts[0], None, None, &config(seed)).unwrap();
        let (w, _) = out.model.weight_summary(&parts[0]).unwrap();
        assert!(w[0] > w[1] && w[0] > w[2], "seed {seed}: {w:?}");

        let single = subset_sweep(&out.model, &parts[1], 1, None, 0).unwrap();
        let f1: Vec<f64> = single.combos.iter().map(|c| c.macro_f1).collect();
        assert!(f1[0] > f1[1] && f1[1] > f1[2], "seed {seed}: {f1:?}");

        let all = out.model.predict(&parts[1].full_batch(), &[0, 1, 2]).unwrap();
        let truth: Vec<usize> = parts[1].labels.iter().map(|l| l.unwrap()).collect();
        let all_f1 = macro_f1(&all, &truth, 4).unwrap();
        assert!(all_f1 >= single.mean, "seed {seed}: {all_f1} < {}", single.mean);
    }
}

#[test]
fn training_does_not_touch_its_inputs() {
    let ds = gen_synthetic(&SyntheticSpec::inertial(2, 3, 4.0, 0)).unwrap();
    let copy = ds.clone();
    let cfg = AliAdConfig {
        epochs: 1,
        ..config(0)
    };
    let out = train(&ds, None, None, &cfg).unwrap();
    assert_eq!(ds, copy);
    assert!(out.model.num_params() > 0);
    assert_eq!(out.model.num_views(), 2);
}
