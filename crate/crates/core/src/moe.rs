//! Sparse mixture-of-experts classification head.
//!
//! A noisy top-K gate picks `K` of `E` expert MLPs per token; only those
//! experts run on the token and their logits are mixed with the softmax of
//! the kept gate logits. Balance statistics follow the noisy top-K
//! construction: *importance* is the summed gate weight per expert and
//! *load* is the smooth expected number of tokens per expert (the
//! probability, under resampled noise, that a token's logit clears the
//! K-th threshold), so the balancing loss has a gradient. Hard dispatch
//! counts are kept alongside as a diagnostic.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{standard_normal, Mlp, Module, Param};
use crate::rng::Rng;
use crate::tensor::Tensor;

const MASKED_LOGIT: f64 = -1e30;
/// Added to the noise scale so it never collapses to zero.
pub const NOISE_FLOOR: f64 = 1e-2;
/// Denominator guard of [`cv_squared`].
pub const CV_EPS: f64 = 1e-10;

fn default_true() -> bool {
    true
}

/// Gate hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateConfig {
    pub num_experts: usize,
    pub top_k: usize,
    #[serde(default = "default_true")]
    pub noise_enabled: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            num_experts: 16,
            top_k: 3,
            noise_enabled: true,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.top_k > self.num_experts {
            return Err(Error::Config(format!(
                "top_k must lie in 1..={}, got {}",
                self.num_experts, self.top_k
            )));
        }
        Ok(())
    }
}

/// Indices of the `k` largest entries, largest first; ties go to the lower
/// index.
pub fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Gate result for `T` tokens.
#[derive(Debug, Clone)]
pub struct GateOutput {
    /// `[T, E]`, exactly `K` positive entries per row summing to 1.
    pub sparse_weights: Tensor,
    /// Chosen experts per token, highest gate logit first.
    pub selected: Vec<Vec<usize>>,
    /// `[T, E]` per-token dispatch probabilities (0/1 when `K = E`).
    pub load_probs: Tensor,
    /// `[E]` summed gate weight per expert.
    pub importance: Tensor,
    /// `[E]` smooth load, the column sums of `load_probs`.
    pub load: Tensor,
    /// Tokens actually dispatched to each expert.
    pub hard_load: Vec<f64>,
}

impl GateOutput {
    pub fn num_tokens(&self) -> usize {
        self.selected.len()
    }

    /// Statistics restricted to a subset of the tokens.
    pub fn subset(&self, rows: &[usize]) -> Result<GateOutput> {
        let sparse_weights = self.sparse_weights.index_select(0, rows)?;
        let load_probs = self.load_probs.index_select(0, rows)?;
        let e = self.hard_load.len();
        let selected: Vec<Vec<usize>> = rows.iter().map(|&r| self.selected[r].clone()).collect();
        let mut hard_load = vec![0.0; e];
        for s in selected.iter().flatten() {
            hard_load[*s] += 1.0;
        }
        Ok(GateOutput {
            importance: sparse_weights.sum_axis(0, false)?,
            load: load_probs.sum_axis(0, false)?,
            sparse_weights,
            load_probs,
            selected,
            hard_load,
        })
    }

    /// `CV²(importance) + CV²(load)`.
    pub fn balance_loss(&self) -> Result<Tensor> {
        Ok(cv_squared(&self.importance)?.add(&cv_squared(&self.load)?)?)
    }
}

/// Squared coefficient of variation (population variance over squared mean)
/// of a 1-D tensor; `0` for a single entry.
pub fn cv_squared(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 1 {
        return Err(Error::ShapeMismatch {
            op: "cv_squared",
            lhs: x.shape().to_vec(),
            rhs: vec![x.numel()],
        });
    }
    if x.numel() <= 1 {
        return Ok(Tensor::scalar(0.0));
    }
    let mean = x.mean();
    let var = x.sub(&mean)?.square().mean();
    // max(mean², eps), differentiable away from the kink
    let denom = mean.square().add_scalar(-CV_EPS).relu().add_scalar(CV_EPS);
    var.div(&denom)
}

/// Balancing loss over the one-view and fused token groups, summed with
/// equal weight. Missing groups contribute nothing.
pub fn load_balancing_loss(
    one_view: Option<&GateOutput>,
    fused: Option<&GateOutput>,
) -> Result<Tensor> {
    let mut total = Tensor::scalar(0.0);
    for g in [one_view, fused].into_iter().flatten() {
        if g.num_tokens() > 0 {
            total = total.add(&g.balance_loss()?)?;
        }
    }
    Ok(total)
}

/// Noisy top-K gate with clean weights `[C, E]` and noise weights `[C, E]`.
#[derive(Debug, Clone)]
pub struct NoisyTopKGate {
    pub config: GateConfig,
    pub w_gate: Param,
    pub w_noise: Param,
}

impl NoisyTopKGate {
    pub fn new(dim: usize, config: GateConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let bound = 1.0 / crate::math::sqrt(dim.max(1) as f64);
        Ok(Self {
            config,
            w_gate: Param::uniform("gate.w_gate", &[dim, config.num_experts], bound, rng),
            w_noise: Param::new(
                "gate.w_noise",
                vec![0.0; dim * config.num_experts],
                &[dim, config.num_experts],
            )?,
        })
    }

    pub fn clean_logits(&self, tokens: &Tensor) -> Result<Tensor> {
        tokens.matmul(&self.w_gate.value)
    }

    /// Gates `tokens: [T, C]`. Noise is drawn from `rng` only when
    /// `train` is set and noise is enabled.
    pub fn forward(&self, tokens: &Tensor, train: bool, rng: &mut Rng) -> Result<GateOutput> {
        let (e, k) = (self.config.num_experts, self.config.top_k);
        let t = tokens.shape()[0];
        if t == 0 {
            return Err(Error::EmptyBatch("gate received no tokens"));
        }
        let clean = self.clean_logits(tokens)?;
        let noise_std = tokens
            .matmul(&self.w_noise.value)?
            .softplus()
            .add_scalar(NOISE_FLOOR);
        let noisy = if train && self.config.noise_enabled {
            let eps: Vec<f64> = (0..t * e).map(|_| standard_normal(rng)).collect();
            clean.add(&noise_std.mul(&Tensor::from_vec(eps, &[t, e])?)?)?
        } else {
            clean.clone()
        };

        let logits = noisy.data();
        let selected: Vec<Vec<usize>> = (0..t)
            .map(|r| top_k_indices(&logits[r * e..(r + 1) * e], k))
            .collect();
        let mut keep = vec![0.0; t * e];
        let mut hard_load = vec![0.0; e];
        for (r, sel) in selected.iter().enumerate() {
            for &s in sel {
                keep[r * e + s] = 1.0;
                hard_load[s] += 1.0;
            }
        }
        let keep = Tensor::from_vec(keep, &[t, e])?;
        let sparse_weights = noisy
            .add(&keep.add_scalar(-1.0).scale(-MASKED_LOGIT))?
            .softmax(1)?
            .mul(&keep)?;

        let load_probs = if k < e {
            self.smooth_load(&clean, &noisy, &noise_std, &keep)?
        } else {
            keep.clone()
        };
        Ok(GateOutput {
            importance: sparse_weights.sum_axis(0, false)?,
            load: load_probs.sum_axis(0, false)?,
            sparse_weights,
            selected,
            load_probs,
            hard_load,
        })
    }

    /// `P(token t picks expert e)` with the other logits held fixed: an
    /// expert in the top K must stay above the (K+1)-th largest logit, an
    /// expert outside must beat the K-th.
    fn smooth_load(
        &self,
        clean: &Tensor,
        noisy: &Tensor,
        noise_std: &Tensor,
        keep: &Tensor,
    ) -> Result<Tensor> {
        let (e, k) = (self.config.num_experts, self.config.top_k);
        let t = clean.shape()[0];
        let logits = noisy.data();
        let mut kth = vec![0.0; t * e];
        let mut next = vec![0.0; t * e];
        for r in 0..t {
            let order = top_k_indices(&logits[r * e..(r + 1) * e], k + 1);
            kth[r * e + order[k - 1]] = 1.0;
            next[r * e + order[k]] = 1.0;
        }
        let pick = |onehot: Vec<f64>| -> Result<Tensor> {
            noisy.mul(&Tensor::from_vec(onehot, &[t, e])?)?.sum_axis(1, true)
        };
        let (thr_in, thr_out) = (pick(next)?, pick(kth)?);
        let out_mask = keep.neg().add_scalar(1.0);
        let threshold = keep.mul(&thr_in)?.add(&out_mask.mul(&thr_out)?)?;
        Ok(clean.sub(&threshold)?.div(noise_std)?.normal_cdf())
    }
}

impl Module for NoisyTopKGate {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.w_gate);
        f(&self.w_noise);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w_gate);
        f(&mut self.w_noise);
    }
}

/// Gate plus `E` expert MLPs `C -> C -> M`.
#[derive(Debug, Clone)]
pub struct MoeHead {
    pub gate: NoisyTopKGate,
    pub experts: Vec<Mlp>,
}

impl MoeHead {
    pub fn new(dim: usize, num_classes: usize, config: GateConfig, rng: &mut Rng) -> Result<Self> {
        let gate = NoisyTopKGate::new(dim, config, rng)?;
        let experts = (0..config.num_experts)
            .map(|e| Mlp::new(&format!("expert{e}"), dim, dim, num_classes, rng))
            .collect();
        Ok(Self { gate, experts })
    }

    pub fn num_classes(&self) -> usize {
        self.experts[0].out.output_dim()
    }

    /// Class logits `[T, M]`; each expert runs only on the tokens routed to
    /// it.
    pub fn forward(
        &self,
        tokens: &Tensor,
        train: bool,
        rng: &mut Rng,
    ) -> Result<(Tensor, GateOutput)> {
        let gate = self.gate.forward(tokens, train, rng)?;
        let logits = self.combine(tokens, &gate)?;
        Ok((logits, gate))
    }

    /// Mixes the routed experts' logits with the given gate output.
    pub fn combine(&self, tokens: &Tensor, gate: &GateOutput) -> Result<Tensor> {
        let t = tokens.shape()[0];
        let mut out = Tensor::zeros(&[t, self.num_classes()]);
        for (e, expert) in self.experts.iter().enumerate() {
            let rows: Vec<usize> = (0..t).filter(|&r| gate.selected[r].contains(&e)).collect();
            if rows.is_empty() {
                continue;
            }
            let y = expert.forward(&tokens.index_select(0, &rows)?)?;
            let g = gate.sparse_weights.index_select(0, &rows)?.index_select(1, &[e])?;
            out = out.add(&y.mul(&g)?.scatter(0, &rows, t)?)?;
        }
        Ok(out)
    }
}

impl Module for MoeHead {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.gate.visit(f);
        for e in &self.experts {
            e.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.gate.visit_mut(f);
        for e in &mut self.experts {
            e.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rng::seeded;

    fn random_tokens(t: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = seeded(seed);
        Tensor::from_vec((0..t * c).map(|_| standard_normal(&mut rng)).collect(), &[t, c]).unwrap()
    }

    fn cfg(e: usize, k: usize, noise: bool) -> GateConfig {
        GateConfig {
            num_experts: e,
            top_k: k,
            noise_enabled: noise,
        }
    }

    #[test]
    fn top_k_larger_than_experts_is_rejected() {
        assert!(NoisyTopKGate::new(4, cfg(4, 5, true), &mut seeded(0)).is_err());
        assert!(NoisyTopKGate::new(4, cfg(4, 0, true), &mut seeded(0)).is_err());
    }

    #[test]
    fn rows_have_k_positive_weights_summing_to_one() {
        for (e, k) in [(8, 2), (16, 3), (32, 4)] {
            let gate = NoisyTopKGate::new(6, cfg(e, k, true), &mut seeded(e as u64)).unwrap();
            let x = random_tokens(20, 6, 3);
            for train in [false, true] {
                let g = gate.forward(&x, train, &mut seeded(4)).unwrap();
                for r in 0..20 {
                    let row = &g.sparse_weights.data()[r * e..(r + 1) * e];
                    assert_eq!(row.iter().filter(|&&w| w > 0.0).count(), k);
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
                let imp: Vec<f64> = (0..e)
                    .map(|c| (0..20).map(|r| g.sparse_weights.data()[r * e + c]).sum())
                    .collect();
                for (a, b) in imp.iter().zip(g.importance.data()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn full_top_k_is_dense_softmax() {
        let gate = NoisyTopKGate::new(5, cfg(6, 6, false), &mut seeded(1)).unwrap();
        let x = random_tokens(4, 5, 2);
        let g = gate.forward(&x, false, &mut seeded(0)).unwrap();
        let dense = gate.clean_logits(&x).unwrap().softmax(1).unwrap();
        for (a, b) in g.sparse_weights.data().iter().zip(dense.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_matches_independent_logits() {
        let (t, c, e) = (4, 5, 8);
        let gate = NoisyTopKGate::new(c, cfg(e, 3, false), &mut seeded(11)).unwrap();
        let x = random_tokens(t, c, 12);
        let g = gate.forward(&x, true, &mut seeded(0)).unwrap();
        let w = gate.w_gate.value.data();
        for r in 0..t {
            let logits: Vec<f64> = (0..e)
                .map(|j| (0..c).map(|i| x.data()[r * c + i] * w[i * e + j]).sum())
                .collect();
            let mut order: Vec<usize> = (0..e).collect();
            order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap());
            assert_eq!(g.selected[r], order[..3].to_vec());
        }
    }

    #[test]
    fn noiseless_gating_is_a_pure_function() {
        let gate = NoisyTopKGate::new(5, cfg(8, 2, true), &mut seeded(1)).unwrap();
        let x = random_tokens(6, 5, 2);
        let a = gate.forward(&x, false, &mut seeded(1)).unwrap();
        let b = gate.forward(&x, false, &mut seeded(2)).unwrap();
        assert_eq!(a.sparse_weights.data(), b.sparse_weights.data());
        assert_eq!(a.load.data(), b.load.data());
    }

    #[test]
    fn head_matches_dense_oracle() {
        let (c, m) = (6, 3);
        let head = MoeHead::new(c, m, cfg(4, 2, false), &mut seeded(5)).unwrap();
        let x = random_tokens(7, c, 6);
        let (y, g) = head.forward(&x, false, &mut seeded(0)).unwrap();
        for r in 0..7 {
            let row = x.index_select(0, &[r]).unwrap();
            let mut expect = vec![0.0; m];
            for (e, expert) in head.experts.iter().enumerate() {
                let ge = g.sparse_weights.data()[r * 4 + e];
                let out = expert.forward(&row).unwrap();
                for j in 0..m {
                    expect[j] += ge * out.data()[j];
                }
            }
            for j in 0..m {
                assert!((y.data()[r * m + j] - expect[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_expert_head_is_that_expert() {
        let head = MoeHead::new(4, 3, cfg(1, 1, true), &mut seeded(2)).unwrap();
        let x = random_tokens(5, 4, 3);
        let (y, _) = head.forward(&x, true, &mut seeded(4)).unwrap();
        assert_eq!(y.data(), head.experts[0].forward(&x).unwrap().data());
    }

    #[test]
    fn identical_experts_give_that_experts_logits() {
        let mut head = MoeHead::new(4, 3, cfg(5, 2, true), &mut seeded(2)).unwrap();
        let first = head.experts[0].clone();
        for e in head.experts.iter_mut() {
            *e = first.clone();
        }
        let x = random_tokens(5, 4, 3);
        let (y, _) = head.forward(&x, true, &mut seeded(4)).unwrap();
        let expect = first.forward(&x).unwrap();
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cv_squared_values() {
        let cv = |v: Vec<f64>| {
            let n = v.len();
            cv_squared(&Tensor::from_vec(v, &[n]).unwrap()).unwrap().item()
        };
        assert_eq!(cv(vec![1.0, 3.0]), 0.25);
        assert_eq!(cv(vec![2.5; 6]), 0.0);
        assert_eq!(cv(vec![7.0]), 0.0);
        let mut onehot = vec![0.0; 16];
        onehot[3] = 4.2;
        assert!((cv(onehot) - 15.0).abs() < 1e-9);
        let x = vec![0.3, 1.7, 2.2, 0.9];
        let scaled: Vec<f64> = x.iter().map(|v| v * 13.0).collect();
        assert!((cv(x) - cv(scaled)).abs() < 1e-12);
        assert!(cv(vec![0.0, 0.0]).is_finite());
    }

    #[test]
    fn balancing_loss_sums_groups() {
        let gate = NoisyTopKGate::new(5, cfg(8, 2, true), &mut seeded(1)).unwrap();
        let a = gate.forward(&random_tokens(6, 5, 2), true, &mut seeded(1)).unwrap();
        let b = gate.forward(&random_tokens(3, 5, 3), true, &mut seeded(2)).unwrap();
        let both = load_balancing_loss(Some(&a), Some(&b)).unwrap().item();
        let sep = load_balancing_loss(Some(&a), None).unwrap().item()
            + load_balancing_loss(None, Some(&b)).unwrap().item();
        assert!((both - sep).abs() < 1e-12);
        assert_eq!(load_balancing_loss(None, None).unwrap().item(), 0.0);
    }

    #[test]
    fn subset_statistics_match_direct_gating() {
        let gate = NoisyTopKGate::new(5, cfg(8, 3, true), &mut seeded(1)).unwrap();
        let x = random_tokens(6, 5, 2);
        let all = gate.forward(&x, false, &mut seeded(0)).unwrap();
        let rows = [1, 4, 5];
        let part = gate
            .forward(&x.index_select(0, &rows).unwrap(), false, &mut seeded(0))
            .unwrap();
        let sub = all.subset(&rows).unwrap();
        assert_eq!(sub.selected, part.selected);
        assert_eq!(sub.hard_load, part.hard_load);
        for (a, b) in sub.load.data().iter().zip(part.load.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn balancing_loss_has_gate_gradient() {
        let gate = NoisyTopKGate::new(4, cfg(8, 2, true), &mut seeded(3)).unwrap();
        let x = random_tokens(10, 4, 4);
        let g = gate.forward(&x, true, &mut seeded(5)).unwrap();
        let grads = g.balance_loss().unwrap().backward().unwrap();
        assert!(grads.get_or_zeros(&gate.w_gate.value).iter().any(|&v| v != 0.0));
        assert!(grads.get_or_zeros(&gate.w_noise.value).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gradients_of_head_and_balancing() {
        let head = MoeHead::new(4, 3, cfg(6, 2, false), &mut seeded(8)).unwrap();
        let x = random_tokens(5, 4, 9);
        let r = grad_check(
            |t| {
                let mut h = head.clone();
                h.gate.w_gate.value = t[1].clone();
                h.experts[0].hidden.weight.value = t[2].clone();
                let (y, g) = h.forward(&t[0], false, &mut seeded(0))?;
                y.square().mean().add(&g.balance_loss()?)
            },
            &[
                x,
                head.gate.w_gate.value.clone(),
                head.experts[0].hidden.weight.value.clone(),
            ],
            1e-5,
        )
        .unwrap();
        assert!(r.passed(1e-4), "{}", r.max_relative_error);

        // smooth load through the noise weights (noise active, fixed draw)
        let gate = NoisyTopKGate::new(4, cfg(6, 2, true), &mut seeded(8)).unwrap();
        let x = random_tokens(5, 4, 10);
        let w_noise = Tensor::from_vec(
            (0..24).map(|i| 0.05 * (i as f64 - 12.0)).collect(),
            &[4, 6],
        )
        .unwrap();
        let r = grad_check(
            |t| {
                let mut g = gate.clone();
                g.w_gate.value = t[0].clone();
                g.w_noise.value = t[1].clone();
                cv_squared(&g.forward(&x, true, &mut seeded(3))?.load)
            },
            &[gate.w_gate.value.clone(), w_noise],
            1e-5,
        )
        .unwrap();
        assert!(r.passed(1e-4), "{}", r.max_relative_error);
    }
}
