use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::gradcheck::grad_check;
use crate::math;

fn rows(n: usize, c: usize, seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    let v = (0..n * c).map(|_| standard_normal(&mut rng)).collect();
    Tensor::from_vec(v, &[n, c]).unwrap()
}

#[test]
fn single_sample_pair_loss_is_zero() {
    let (a, b) = (rows(1, 4, 1), rows(1, 4, 2));
    let pl = pair_loss(&a, &b, &[true], 0.1).unwrap();
    assert!(pl.mean.item().abs() < 1e-12);
}

#[test]
fn identical_embeddings_give_two_ln_three() {
    let a = Tensor::from_vec(vec![0.6, 0.8, 0.6, 0.8], &[2, 2]).unwrap();
    let pl = pair_loss(&a, &a, &[true, true], 0.1).unwrap();
    for &v in pl.per_sample.data() {
        assert!((v - 2.0 * math::ln(3.0)).abs() < 1e-12);
    }
}

#[test]
fn pair_loss_matches_nested_loops() {
    for seed in 0..5 {
        let (a, b) = (rows(4, 8, seed), rows(4, 8, seed + 100));
        let mask = [true, seed % 2 == 0, true, true];
        let pl = pair_loss(&a, &b, &mask, 0.1).unwrap();
        let oracle = pair_loss_reference(a.data(), b.data(), 8, &mask, 0.1).unwrap();
        for (x, y) in pl.per_sample.data().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
}

#[test]
fn pair_loss_errors() {
    let (a, b) = (rows(3, 4, 1), rows(3, 4, 2));
    assert!(pair_loss(&a, &b, &[true; 3], 0.0).is_err());
    assert!(matches!(
        pair_loss(&a, &b, &[false; 3], 0.1),
        Err(Error::EmptyBatch(_))
    ));
}

#[test]
fn two_view_uniform_reduces_to_pair_loss() {
    for seed in 0..5 {
        let (e, w) = random_instance(2, 6, 8, false, seed).unwrap();
        let ac = adjusted_center_loss(&e, &w, 0.1, &mut PairCountLedger::default()).unwrap();
        let w = Tensor::full(&[2, 6], 0.5);
        let ac_u = adjusted_center_loss(&e, &w, 0.1, &mut PairCountLedger::default()).unwrap();
        let pl = pair_loss(&e.view(0).unwrap(), &e.view(1).unwrap(), &[true; 6], 0.1).unwrap();
        assert!((ac_u.item() - pl.mean.item()).abs() < 1e-8);
        // non-uniform weights generally differ
        assert!(ac.item().is_finite());
    }
}

#[test]
fn optimized_matches_reference_with_masks() {
    for seed in 0..40u64 {
        let v = 2 + (seed as usize % 8);
        let n = 2 + (seed as usize * 7 % 31);
        let (e, w) = random_instance(v, n, 6, seed % 3 != 0, seed).unwrap();
        let fast = adjusted_center_loss(&e, &w, 0.1, &mut PairCountLedger::default()).unwrap();
        let slow = adjusted_center_loss_reference(&e, &w, 0.1).unwrap();
        assert!((fast.item() - slow).abs() < 1e-10, "V={v} N={n}: {} vs {slow}", fast.item());
    }
}

#[test]
fn uniform_five_views_match_reference() {
    let (e, _) = random_instance(5, 8, 16, false, 3).unwrap();
    let w = Tensor::full(&[5, 8], 0.2);
    let fast = adjusted_center_loss(&e, &w, 0.1, &mut PairCountLedger::default()).unwrap();
    let slow = adjusted_center_loss_reference(&e, &w, 0.1).unwrap();
    assert!((fast.item() - slow).abs() < 1e-10);
}

#[test]
fn weights_receive_no_gradient() {
    let (e, w) = random_instance(4, 5, 8, true, 9).unwrap();
    let w = w.detach_param();
    let z = e.z.detach_param();
    let e = EmbeddingSet::new(z.clone(), e.mask.clone()).unwrap();
    let loss = adjusted_center_loss(&e, &w, 0.1, &mut PairCountLedger::default()).unwrap();
    let g = loss.backward().unwrap();
    assert!(g.get_or_zeros(&w).iter().all(|&x| x == 0.0));
    assert!(g.get(&z).is_some());
}

#[test]
fn centers_carry_no_gradient() {
    let (e, w) = random_instance(3, 6, 8, false, 4).unwrap();
    let z = e.z.detach_param();
    let e = EmbeddingSet::new(z.clone(), e.mask.clone()).unwrap();
    let g1 = adjusted_center_loss(&e, &w, 0.1, &mut PairCountLedger::default())
        .unwrap()
        .backward()
        .unwrap()
        .get_or_zeros(&z);
    let g2 = adjusted_center_loss_with_center_grad(&e, &w, 0.1, &mut PairCountLedger::default())
        .unwrap()
        .backward()
        .unwrap()
        .get_or_zeros(&z);
    let diff: f64 = g1.iter().zip(&g2).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-6);

    // with stop-gradients, the gradient on z[a] equals the gradient of the
    // view-a term alone with its center frozen
    let a = 1;
    let c = 8;
    let za = e.view(a).unwrap().stop_gradient().detach_param();
    let wd = w.data();
    let mut center = vec![0.0; 6 * c];
    for n in 0..6 {
        for v in (0..3).filter(|&v| v != a) {
            for k in 0..c {
                center[n * c + k] += wd[v * 6 + n] * e.z.data()[(v * 6 + n) * c + k];
            }
        }
    }
    let center = Tensor::from_vec(center, &[6, c]).unwrap();
    let pl = pair_loss(&za, &center, &[true; 6], 0.1).unwrap();
    let factor = Tensor::from_vec((0..6).map(|n| 1.0 - wd[a * 6 + n]).collect(), &[6]).unwrap();
    let term = pl.per_sample.mul(&factor).unwrap().sum().scale(1.0 / (2.0 * 6.0));
    let ga = term.backward().unwrap().get_or_zeros(&za);
    for (x, y) in ga.iter().zip(&g1[a * 6 * c..(a + 1) * 6 * c]) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn frozen_variant_matches_value_and_gradient() {
    let (e, w) = random_instance(4, 5, 6, true, 31).unwrap();
    let z = e.z.detach_param();
    let e = EmbeddingSet::new(z.clone(), e.mask.clone()).unwrap();
    let a = adjusted_center_loss(&e, &w, 0.1, &mut PairCountLedger::default()).unwrap();
    let b = adjusted_center_loss_frozen(&e, &w, &z, 0.1, &mut PairCountLedger::default()).unwrap();
    assert_eq!(a.item(), b.item());
    let ga = a.backward().unwrap().get_or_zeros(&z);
    let gb = b.backward().unwrap().get_or_zeros(&z);
    assert_eq!(ga, gb);
}

#[test]
fn ledger_counts() {
    for v in 2..=9 {
        let (e, w) = bench_inputs(v, 8, 4, 1).unwrap();
        let mut ac = PairCountLedger::default();
        adjusted_center_loss(&e, &w, 0.1, &mut ac).unwrap();
        assert_eq!(ac.pair_loss_evaluations, v as u64);
        let mut fg = PairCountLedger::default();
        full_graph_loss(&e, 0.1, &mut fg).unwrap();
        assert_eq!(fg.pair_loss_evaluations, (v * (v - 1) / 2) as u64);
        assert_eq!(ac.critic_evaluations, v as u64 * (3 * 64 - 16));
    }
}

#[test]
fn full_graph_two_views_is_pair_loss() {
    let (e, _) = random_instance(2, 5, 8, false, 2).unwrap();
    let fg = full_graph_loss(&e, 0.1, &mut PairCountLedger::default()).unwrap();
    let pl = pair_loss(&e.view(0).unwrap(), &e.view(1).unwrap(), &[true; 5], 0.1).unwrap();
    assert_eq!(fg.item(), pl.mean.item());
}

#[test]
fn scale_and_permutation_invariance() {
    let (e, w) = random_instance(4, 7, 8, true, 12).unwrap();
    let base = adjusted_center_loss(&e, &w, 0.1, &mut PairCountLedger::default())
        .unwrap()
        .item();
    let fg = full_graph_loss(&e, 0.1, &mut PairCountLedger::default()).unwrap().item();
    let scaled = e.scaled(3.7);
    let s = adjusted_center_loss(&scaled, &w, 0.1, &mut PairCountLedger::default())
        .unwrap()
        .item();
    assert!((s - base).abs() < 1e-9);
    assert!((full_graph_loss(&scaled, 0.1, &mut PairCountLedger::default()).unwrap().item() - fg).abs() < 1e-9);

    let perm = [2usize, 0, 3, 1];
    let z = e.z.index_select(0, &perm).unwrap();
    let mut bits = Vec::new();
    for n in 0..7 {
        for &p in &perm {
            bits.push(e.mask.is_present(p, n));
        }
    }
    let ep = EmbeddingSet::new(z, PresenceMask::new(7, 4, bits).unwrap()).unwrap();
    let wp = w.index_select(0, &perm).unwrap();
    let p = adjusted_center_loss(&ep, &wp, 0.1, &mut PairCountLedger::default())
        .unwrap()
        .item();
    assert!((p - base).abs() < 1e-10);
    let fgp = full_graph_loss(&ep, 0.1, &mut PairCountLedger::default()).unwrap().item();
    assert!((fgp - fg).abs() < 1e-10);
}

#[test]
fn weight_scale_identity() {
    let (e, w) = random_instance(6, 10, 4, false, 5).unwrap();
    for n in 0..10 {
        let s: f64 = (0..6).map(|v| 1.0 - w.data()[v * 10 + n]).sum::<f64>() / 5.0;
        assert!((s - 1.0).abs() < 1e-9);
    }
    let _ = e;
}

#[test]
fn invalid_inputs() {
    let (e, w) = random_instance(3, 4, 4, false, 1).unwrap();
    let bad = w.scale(1.5);
    assert!(matches!(
        adjusted_center_loss(&e, &bad, 0.1, &mut PairCountLedger::default()),
        Err(Error::WeightsNotNormalized { .. })
    ));
    let (e1, w1) = random_instance(1, 4, 4, false, 1).unwrap();
    assert!(adjusted_center_loss(&e1, &w1, 0.1, &mut PairCountLedger::default()).is_err());
    assert!(full_graph_loss(&e1, 0.1, &mut PairCountLedger::default()).is_err());
    assert!(adjusted_center_loss(&e, &w, -0.1, &mut PairCountLedger::default()).is_err());
}

#[test]
fn single_view_samples_contribute_nothing() {
    // sample 1 only has view 0; dropping it from the batch leaves the loss unchanged
    let (e, w) = random_instance(2, 3, 4, false, 8).unwrap();
    let mut mask = e.mask.clone();
    mask.set(1, 1, false);
    let mut wd = w.to_vec();
    wd[3 + 1] = 0.0;
    wd[1] = 1.0;
    let mut z = e.z.to_vec();
    z[(3 + 1) * 4..(3 + 2) * 4].iter_mut().for_each(|x| *x = 0.0);
    let e_m = EmbeddingSet::new(Tensor::from_vec(z, &[2, 3, 4]).unwrap(), mask).unwrap();
    let w_m = Tensor::from_vec(wd, &[2, 3]).unwrap();
    let with = adjusted_center_loss(&e_m, &w_m, 0.1, &mut PairCountLedger::default()).unwrap();

    let keep = [0usize, 2];
    let e_k = EmbeddingSet::new(
        e.z.index_select(1, &keep).unwrap(),
        PresenceMask::all_present(2, 2),
    )
    .unwrap();
    let w_k = w.index_select(1, &keep).unwrap();
    let without = adjusted_center_loss(&e_k, &w_k, 0.1, &mut PairCountLedger::default()).unwrap();
    assert!((with.item() - without.item()).abs() < 1e-12);
}

#[test]
fn gradients_match_finite_differences() {
    let (e, w) = random_instance(3, 4, 8, true, 21).unwrap();
    let mask = e.mask.clone();
    // stop-gradient inputs are held at their base values, as the backward pass assumes
    let frozen = e.z.clone();
    let r = grad_check(
        |t| {
            let e = EmbeddingSet::new(t[0].clone(), mask.clone())?;
            adjusted_center_loss_frozen(&e, &w, &frozen, 0.1, &mut PairCountLedger::default())
        },
        &[e.z.clone()],
        1e-5,
    )
    .unwrap();
    assert!(r.passed(1e-4), "{}", r.max_relative_error);

    let r = grad_check(
        |t| {
            let e = EmbeddingSet::new(t[0].clone(), mask.clone())?;
            full_graph_loss(&e, 0.1, &mut PairCountLedger::default())
        },
        &[e.z.clone()],
        1e-5,
    )
    .unwrap();
    assert!(r.passed(1e-4), "{}", r.max_relative_error);

    let (a, b) = (rows(5, 4, 1), rows(5, 4, 2));
    let r = grad_check(
        |t| Ok(pair_loss(&t[0], &t[1], &[true, true, false, true, true], 0.5)?.mean),
        &[a, b],
        1e-5,
    )
    .unwrap();
    assert!(r.passed(1e-4), "{}", r.max_relative_error);
}
