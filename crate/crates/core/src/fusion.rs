//! Attention-based view weighting and weighted fusion.
//!
//! A shared two-layer MLP maps every view embedding to a scalar logit; a
//! softmax over the present views of each sample turns logits into weights.
//! The MLP sees the embeddings through a stop-gradient, so the attention
//! network learns view importance from the downstream loss while the
//! encoders receive no gradient through the attention input.

use alloc::vec;
use alloc::vec::Vec;

use crate::contrastive::EmbeddingSet;
use crate::data::PresenceMask;
use crate::error::{Error, Result};
use crate::nn::{Mlp, Module, Param};
use crate::rng::Rng;
use crate::tensor::Tensor;

const MASKED_LOGIT: f64 = -1e30;

/// Hidden width of the attention MLP for embedding size `c`.
pub fn attention_hidden(c: usize) -> usize {
    (c / 2).max(16)
}

/// Shared view-scoring network `C -> hidden -> 1`.
#[derive(Debug, Clone)]
pub struct AttentionNet {
    pub mlp: Mlp,
}

impl AttentionNet {
    pub fn new(c: usize, rng: &mut Rng) -> Self {
        Self {
            mlp: Mlp::new("attention", c, attention_hidden(c), 1, rng),
        }
    }

    /// Logits `[V, N]` for embeddings `[V, N, C]`.
    pub fn logits(&self, z: &Tensor) -> Result<Tensor> {
        let (v, n, c) = (z.shape()[0], z.shape()[1], z.shape()[2]);
        self.mlp.forward(&z.reshape(&[v * n, c])?)?.reshape(&[v, n])
    }
}

impl Module for AttentionNet {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.mlp.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.mlp.visit_mut(f);
    }
}

/// Per-sample view weights `[V, N]`.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub w: Tensor,
}

impl AttentionWeights {
    /// Weight of view `v` for sample `n`.
    pub fn get(&self, v: usize, n: usize) -> f64 {
        let samples = self.w.shape()[1];
        self.w.data()[v * samples + n]
    }

    /// Mean weight of each view over all samples (absent views count as 0),
    /// so the means sum to 1.
    pub fn view_means(&self) -> Vec<f64> {
        let (v, n) = (self.w.shape()[0], self.w.shape()[1]);
        (0..v)
            .map(|k| self.w.data()[k * n..(k + 1) * n].iter().sum::<f64>() / n.max(1) as f64)
            .collect()
    }
}

fn check_nonempty(mask: &PresenceMask) -> Result<()> {
    match mask.first_empty() {
        Some(sample) => Err(Error::NoPresentViews { sample }),
        None => Ok(()),
    }
}

/// Softmax over the present views of each sample; weights are exactly zero
/// on absent views.
pub fn masked_softmax(logits: &Tensor, mask: &PresenceMask) -> Result<Tensor> {
    check_nonempty(mask)?;
    let m = mask.to_tensor();
    // (m - 1) * 1e30: zero on present views, -1e30 on absent ones
    let penalty = m.add_scalar(-1.0).scale(-MASKED_LOGIT);
    logits.add(&penalty)?.softmax(0)?.mul(&m)
}

/// Attention weights for the present views. With `stop_grad` the network
/// input is cut from the encoder graph.
pub fn attention_weights(
    e: &EmbeddingSet,
    net: &AttentionNet,
    stop_grad: bool,
) -> Result<AttentionWeights> {
    check_nonempty(&e.mask)?;
    let input = if stop_grad { e.z.stop_gradient() } else { e.z.clone() };
    let logits = net.logits(&input)?;
    Ok(AttentionWeights {
        w: masked_softmax(&logits, &e.mask)?,
    })
}

/// Uniform `1/|present|` weights (the attention ablation).
pub fn uniform_weights(mask: &PresenceMask) -> Result<AttentionWeights> {
    check_nonempty(mask)?;
    let (v, n) = (mask.num_views(), mask.num_samples());
    let mut w = vec![0.0; v * n];
    for s in 0..n {
        let k = mask.present_count(s) as f64;
        for view in 0..v {
            if mask.is_present(view, s) {
                w[view * n + s] = 1.0 / k;
            }
        }
    }
    Ok(AttentionWeights {
        w: Tensor::from_vec(w, &[v, n])?,
    })
}

/// `sum_v w[v, n] z[v, n]` as `[N, C]`. The caller applies magnitude
/// normalization.
pub fn weighted_fusion(e: &EmbeddingSet, w: &AttentionWeights) -> Result<Tensor> {
    let (v, n) = (e.num_views(), e.num_samples());
    if w.w.shape() != [v, n] {
        return Err(Error::ShapeMismatch {
            op: "weighted_fusion",
            lhs: w.w.shape().to_vec(),
            rhs: vec![v, n],
        });
    }
    e.z.mul(&w.w.reshape(&[v, n, 1])?)?.sum_axis(0, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{angle, mag_norm};
    use crate::gradcheck::grad_check;
    use crate::rng::seeded;

    fn set(z: Vec<f64>, v: usize, n: usize, c: usize, mask: PresenceMask) -> EmbeddingSet {
        EmbeddingSet::new(Tensor::from_vec(z, &[v, n, c]).unwrap(), mask).unwrap()
    }

    #[test]
    fn identical_views_get_uniform_weights() {
        let net = AttentionNet::new(4, &mut seeded(1));
        let row = [0.5, -1.0, 2.0, 0.1];
        let z: Vec<f64> = (0..3).flat_map(|_| row).collect();
        let e = set(z, 3, 1, 4, PresenceMask::all_present(1, 3));
        let w = attention_weights(&e, &net, true).unwrap();
        for v in 0..3 {
            assert!((w.get(v, 0) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_present_view_gets_all_weight() {
        let net = AttentionNet::new(4, &mut seeded(2));
        let (e, _) = crate::contrastive::random_instance(3, 1, 4, false, 5).unwrap();
        let mask = PresenceMask::new(1, 3, vec![false, true, false]).unwrap();
        let e = EmbeddingSet::new(e.z, mask).unwrap();
        let w = attention_weights(&e, &net, true).unwrap();
        assert_eq!([w.get(0, 0), w.get(1, 0), w.get(2, 0)], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn masked_weights_follow_remaining_logits() {
        let net = AttentionNet::new(8, &mut seeded(7));
        let (e, _) = crate::contrastive::random_instance(3, 2, 8, false, 6).unwrap();
        let logits = net.logits(&e.z).unwrap();
        let mut mask = PresenceMask::all_present(2, 3);
        mask.set(1, 0, false);
        let e = EmbeddingSet::new(e.z, mask).unwrap();
        let w = attention_weights(&e, &net, true).unwrap();
        let (l0, l2) = (logits.data()[0], logits.data()[4]);
        let m = l0.max(l2);
        let (e0, e2) = ((l0 - m).exp(), (l2 - m).exp());
        assert!((w.get(0, 0) - e0 / (e0 + e2)).abs() < 1e-12);
        assert!((w.get(2, 0) - e2 / (e0 + e2)).abs() < 1e-12);
        assert_eq!(w.get(1, 0), 0.0);
        let total: f64 = (0..3).map(|v| w.get(v, 1)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sample_is_an_error() {
        let net = AttentionNet::new(2, &mut seeded(1));
        let mask = PresenceMask::new(1, 2, vec![false, false]).unwrap();
        let e = set(vec![1.0; 4], 2, 1, 2, mask);
        assert!(matches!(
            attention_weights(&e, &net, true),
            Err(Error::NoPresentViews { sample: 0 })
        ));
    }

    #[test]
    fn fusion_cases() {
        // single present view
        let mask = PresenceMask::new(1, 2, vec![true, false]).unwrap();
        let e = set(vec![0.3, 0.4, 0.0, 0.0], 2, 1, 2, mask.clone());
        let f = weighted_fusion(&e, &uniform_weights(&mask).unwrap()).unwrap();
        assert_eq!(f.data(), &[0.3, 0.4]);

        // orthogonal unit views with weights (0.8, 0.2)
        let e = set(vec![1.0, 0.0, 0.0, 1.0], 2, 1, 2, PresenceMask::all_present(1, 2));
        let w = AttentionWeights {
            w: Tensor::from_vec(vec![0.8, 0.2], &[2, 1]).unwrap(),
        };
        let f = weighted_fusion(&e, &w).unwrap();
        let deg = angle(f.data(), &[1.0, 0.0]).unwrap().to_degrees();
        assert!((deg - 14.036_243_467_926_479).abs() < 1e-9);

        // identical views, any weights
        let e = set(vec![0.6, 0.8, 0.6, 0.8], 2, 1, 2, PresenceMask::all_present(1, 2));
        let w = AttentionWeights {
            w: Tensor::from_vec(vec![0.3, 0.7], &[2, 1]).unwrap(),
        };
        let f = mag_norm(&weighted_fusion(&e, &w).unwrap()).unwrap();
        let expect = mag_norm(&Tensor::from_vec(vec![0.6, 0.8], &[1, 2]).unwrap()).unwrap();
        for (a, b) in f.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn higher_weight_attracts_fusion() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.6, 0.8, 0.0];
        let z: Vec<f64> = a.iter().chain(&b).copied().collect();
        let e = set(z, 2, 1, 3, PresenceMask::all_present(1, 2));
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let w1 = k as f64 / 20.0;
            let w = AttentionWeights {
                w: Tensor::from_vec(vec![w1, 1.0 - w1], &[2, 1]).unwrap(),
            };
            let f = weighted_fusion(&e, &w).unwrap();
            let ang = angle(f.data(), &a).unwrap();
            assert!(ang < last);
            last = ang;
        }
    }

    #[test]
    fn fusion_lies_in_conic_hull() {
        // two non-collinear views in 2-D: solve for the coefficients
        for seed in 0..20 {
            let (e, w) = crate::contrastive::random_instance(2, 1, 2, false, seed).unwrap();
            let w = AttentionWeights { w };
            let f = weighted_fusion(&e, &w).unwrap();
            let z = e.z.data();
            let det = z[0] * z[3] - z[1] * z[2];
            if det.abs() < 1e-6 {
                continue;
            }
            let c0 = (f.data()[0] * z[3] - f.data()[1] * z[2]) / det;
            let c1 = (z[0] * f.data()[1] - z[1] * f.data()[0]) / det;
            assert!(c0 >= -1e-12 && c1 >= -1e-12);
        }
    }

    #[test]
    fn removing_a_view_moves_tight_fusions_less() {
        // four unit vectors on a cone of the given half-angle, azimuths 90 deg apart
        fn cone(half_angle_deg: f64) -> [[f64; 3]; 4] {
            let t = half_angle_deg.to_radians();
            let mut out = [[0.0; 3]; 4];
            for (k, v) in out.iter_mut().enumerate() {
                let phi = k as f64 * core::f64::consts::FRAC_PI_2 + 0.3;
                *v = [t.sin() * phi.cos(), t.sin() * phi.sin(), t.cos()];
            }
            out
        }
        let tight = cone(8.0);
        let loose = cone(45.0);
        let cos = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(cos(&tight[i], &tight[j]) >= 0.95);
                assert!(cos(&loose[i], &loose[j]) <= 0.5 + 1e-12);
            }
        }
        let fuse = |vs: &[[f64; 3]], skip: Option<usize>| {
            let mut s = [0.0; 3];
            for (_, v) in vs.iter().enumerate().filter(|(k, _)| Some(*k) != skip) {
                for d in 0..3 {
                    s[d] += v[d];
                }
            }
            s
        };
        for drop in 0..4 {
            let shift = |vs: &[[f64; 3]]| angle(&fuse(vs, None), &fuse(vs, Some(drop))).unwrap();
            assert!(shift(&tight) < shift(&loose));
        }
    }

    #[test]
    fn attention_path_gradients() {
        let net = AttentionNet::new(4, &mut seeded(9));
        let (e, _) = crate::contrastive::random_instance(3, 2, 4, true, 8).unwrap();
        let mask = e.mask.clone();
        let r = grad_check(
            |t| {
                let e = EmbeddingSet::new(t[0].clone(), mask.clone())?;
                let mut net = net.clone();
                net.mlp.hidden.weight.value = t[1].clone();
                let w = attention_weights(&e, &net, false)?;
                let f = weighted_fusion(&e, &w)?;
                Ok(mag_norm(&f)?.square().mul(&f)?.sum())
            },
            &[e.z.clone(), net.mlp.hidden.weight.value.clone()],
            1e-5,
        )
        .unwrap();
        assert!(r.passed(1e-4), "{}", r.max_relative_error);
    }

    #[test]
    fn stop_gradient_blocks_encoder_path() {
        let net = AttentionNet::new(4, &mut seeded(9));
        let (e, _) = crate::contrastive::random_instance(3, 2, 4, false, 8).unwrap();
        let z = e.z.detach_param();
        let e = EmbeddingSet::new(z.clone(), e.mask.clone()).unwrap();
        // loss through the weights only: sum of squared weights
        let sg = attention_weights(&e, &net, true).unwrap().w.square().sum();
        assert!(sg.backward().unwrap().get(&z).is_none());
        let open = attention_weights(&e, &net, false).unwrap().w.square().sum();
        let g = open.backward().unwrap().get_or_zeros(&z);
        assert!(g.iter().any(|&x| x != 0.0));
    }
}
