//! Multiview contrastive losses.
//!
//! * [`pair_loss`]: the symmetric two-view InfoNCE-style loss with the
//!   exponentiated cosine critic. The denominator of each direction runs over
//!   both views of every sample in the batch except the anchor itself, so the
//!   cross-view positive is part of it.
//! * [`adjusted_center_loss`]: each view is contrasted once against the
//!   weighted center of the other views. Weights and weighted embeddings are
//!   constants for the backward pass, the center is formed once and each
//!   view's own contribution is subtracted from it, giving `V` pair-loss
//!   evaluations instead of `V(V-1)/2`.
//! * [`full_graph_loss`]: the all-pairs baseline.
//!
//! Missing `(view, sample)` entries are excluded from numerators, negative
//! pools and centers. Samples with a single present view carry nothing to
//! contrast and contribute zero to the multiview losses.

mod reference;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::PresenceMask;
use crate::error::{Error, Result};
use crate::geometry::{self, check_temperature};
use crate::nn::standard_normal;
use crate::rng::seeded;
use crate::tensor::Tensor;

pub use reference::{adjusted_center_loss_reference, pair_loss_reference};

/// Additive logit for excluded similarity terms.
const EXCLUDED: f64 = -1e30;
/// Floor for norms inside the critic; only reachable by zero centers.
const CRITIC_NORM_FLOOR: f64 = 1e-12;
/// Tolerance of the per-sample weight normalization check.
pub const WEIGHT_SUM_TOL: f64 = 1e-4;

/// Embeddings `z: [V, N, C]` with their presence mask.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub z: Tensor,
    pub mask: PresenceMask,
}

impl EmbeddingSet {
    pub fn new(z: Tensor, mask: PresenceMask) -> Result<Self> {
        if z.rank() != 3 || z.shape()[0] != mask.num_views() || z.shape()[1] != mask.num_samples()
        {
            return Err(Error::ShapeMismatch {
                op: "embedding_set",
                lhs: z.shape().to_vec(),
                rhs: vec![mask.num_views(), mask.num_samples()],
            });
        }
        Ok(Self { z, mask })
    }

    pub fn num_views(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn num_samples(&self) -> usize {
        self.z.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.z.shape()[2]
    }

    /// `[N, C]` slice of view `v`.
    pub fn view(&self, v: usize) -> Result<Tensor> {
        self.z
            .index_select(0, &[v])?
            .reshape(&[self.num_samples(), self.dim()])
    }

    /// Same embeddings multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            z: self.z.scale(c),
            mask: self.mask.clone(),
        }
    }

    /// Checks that every present slice lies on the radius-`sqrt(C)` sphere.
    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        let c = self.dim();
        let radius = crate::math::sqrt(c as f64);
        for v in 0..self.num_views() {
            for n in 0..self.num_samples() {
                if !self.mask.is_present(v, n) {
                    continue;
                }
                let start = (v * self.num_samples() + n) * c;
                let slice = &self.z.data()[start..start + c];
                let norm = crate::math::sqrt(slice.iter().map(|x| x * x).sum());
                if (norm - radius).abs() > tol {
                    return Err(Error::DegenerateEmbedding {
                        index: v * self.num_samples() + n,
                        norm,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Instrumentation of one loss call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCountLedger {
    pub pair_loss_evaluations: u64,
    pub critic_evaluations: u64,
}

/// Output of [`pair_loss`]: per-sample values (zero on excluded samples) and
/// their mean over included samples.
#[derive(Debug, Clone)]
pub struct PairLoss {
    pub per_sample: Tensor,
    pub mean: Tensor,
}

/// Row-wise unit vectors; the norm floor only matters for zero rows.
fn unit_rows(x: &Tensor) -> Result<Tensor> {
    let norms = x
        .l2_norm(1, true)?
        .add_scalar(-CRITIC_NORM_FLOOR)
        .relu()
        .add_scalar(CRITIC_NORM_FLOOR);
    x.div(&norms)
}

fn excluded_diagonal(n: usize) -> Tensor {
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        d[i * n + i] = EXCLUDED;
    }
    Tensor::from_vec(d, &[n, n]).expect("square")
}

/// Symmetric two-view contrastive loss over the samples with `mask_ab` set.
pub fn pair_loss(za: &Tensor, zb: &Tensor, mask_ab: &[bool], tau: f64) -> Result<PairLoss> {
    pair_loss_counted(za, zb, mask_ab, tau, &mut PairCountLedger::default())
}

/// [`pair_loss`] that records its work in `ledger`.
pub fn pair_loss_counted(
    za: &Tensor,
    zb: &Tensor,
    mask_ab: &[bool],
    tau: f64,
    ledger: &mut PairCountLedger,
) -> Result<PairLoss> {
    check_temperature(tau)?;
    if za.rank() != 2 || za.shape() != zb.shape() || mask_ab.len() != za.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "pair_loss",
            lhs: za.shape().to_vec(),
            rhs: zb.shape().to_vec(),
        });
    }
    let total = za.shape()[0];
    let present: Vec<usize> = (0..total).filter(|&i| mask_ab[i]).collect();
    let n = present.len();
    if n == 0 {
        return Err(Error::EmptyBatch("pair_loss: every sample is masked"));
    }

    let a = unit_rows(&za.index_select(0, &present)?)?;
    let b = unit_rows(&zb.index_select(0, &present)?)?;
    let inv_tau = 1.0 / tau;
    let s_ab = a.matmul(&b.transpose()?)?.scale(inv_tau);
    let s_ba = s_ab.transpose()?;
    let diag = excluded_diagonal(n);
    let s_aa = a.matmul(&a.transpose()?)?.scale(inv_tau).add(&diag)?;
    let s_bb = b.matmul(&b.transpose()?)?.scale(inv_tau).add(&diag)?;

    // row i: [sim(a_i, b_j) for j | sim(a_i, a_j) for j != i], target column i
    let targets: Vec<usize> = (0..n).collect();
    let l_ab = Tensor::concat(&[s_ab, s_aa], 1)?.cross_entropy(&targets)?;
    let l_ba = Tensor::concat(&[s_ba, s_bb], 1)?.cross_entropy(&targets)?;
    let per_present = l_ab.add(&l_ba)?;

    ledger.pair_loss_evaluations += 1;
    ledger.critic_evaluations += (3 * n * n - 2 * n) as u64;

    let mean = per_present.mean();
    let per_sample = if n == total {
        per_present
    } else {
        per_present.scatter(0, &present, total)?
    };
    Ok(PairLoss { per_sample, mean })
}

/// Validates attention-style weights `[V, N]` against the mask: nonnegative,
/// zero on absent entries, summing to one over present views.
pub fn check_weights(mask: &PresenceMask, w: &Tensor) -> Result<()> {
    let (v_count, n_count) = (mask.num_views(), mask.num_samples());
    if w.shape() != [v_count, n_count] {
        return Err(Error::ShapeMismatch {
            op: "weights",
            lhs: w.shape().to_vec(),
            rhs: vec![v_count, n_count],
        });
    }
    let wd = w.data();
    for n in 0..n_count {
        let mut sum = 0.0;
        for v in 0..v_count {
            let x = wd[v * n_count + n];
            if x < 0.0 || !x.is_finite() || (!mask.is_present(v, n) && x != 0.0) {
                return Err(Error::WeightsNotNormalized { sample: n, sum: x });
            }
            sum += x;
        }
        if mask.present_count(n) > 0 && (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::WeightsNotNormalized { sample: n, sum });
        }
    }
    Ok(())
}

/// Samples with at least two present views.
pub(crate) fn multiview_samples(mask: &PresenceMask) -> Vec<bool> {
    (0..mask.num_samples())
        .map(|n| mask.present_count(n) >= 2)
        .collect()
}

/// Adjusted center contrastive loss.
///
/// `L = 1/(V-1) * sum_a sum_n (1 - w[a,n]) * l_pair(z[a], c_a)[n] / N_multi`
/// where `c_a = sum_v w[v] z[v] - w[a] z[a]` and `N_multi` counts samples
/// with at least two present views. `w` and `c_a` carry no gradient.
pub fn adjusted_center_loss(
    e: &EmbeddingSet,
    w: &Tensor,
    tau: f64,
    ledger: &mut PairCountLedger,
) -> Result<Tensor> {
    center_loss_impl(e, w, None, tau, ledger, true)
}

/// [`adjusted_center_loss`] with the centers built from `frozen_z` instead
/// of `e.z`. With `frozen_z` equal to `e.z` in value, the loss and its
/// gradient with respect to `e.z` coincide with [`adjusted_center_loss`];
/// holding `frozen_z` fixed while perturbing `e.z` gives the matching
/// finite-difference oracle for the stop-gradient construction.
pub fn adjusted_center_loss_frozen(
    e: &EmbeddingSet,
    w: &Tensor,
    frozen_z: &Tensor,
    tau: f64,
    ledger: &mut PairCountLedger,
) -> Result<Tensor> {
    if frozen_z.shape() != e.z.shape() {
        return Err(Error::ShapeMismatch {
            op: "adjusted_center_loss_frozen",
            lhs: e.z.shape().to_vec(),
            rhs: frozen_z.shape().to_vec(),
        });
    }
    center_loss_impl(e, w, Some(frozen_z), tau, ledger, true)
}

/// The same loss with every stop-gradient removed, so gradients also reach
/// the embeddings through the centers and the weights. Exists to show that
/// the stop-gradients in [`adjusted_center_loss`] change the gradient.
pub fn adjusted_center_loss_with_center_grad(
    e: &EmbeddingSet,
    w: &Tensor,
    tau: f64,
    ledger: &mut PairCountLedger,
) -> Result<Tensor> {
    center_loss_impl(e, w, None, tau, ledger, false)
}

fn center_loss_impl(
    e: &EmbeddingSet,
    w: &Tensor,
    frozen_z: Option<&Tensor>,
    tau: f64,
    ledger: &mut PairCountLedger,
    stop_grad: bool,
) -> Result<Tensor> {
    check_temperature(tau)?;
    let (v_count, n_count, c) = (e.num_views(), e.num_samples(), e.dim());
    if v_count < 2 {
        return Err(Error::Config(alloc::format!(
            "adjusted center loss needs at least 2 views, got {v_count}"
        )));
    }
    check_weights(&e.mask, w)?;

    let multi = multiview_samples(&e.mask);
    let n_multi = multi.iter().filter(|&&m| m).count();
    if n_multi == 0 {
        return Ok(Tensor::scalar(0.0));
    }

    let w = if stop_grad { w.stop_gradient() } else { w.clone() };
    let source = frozen_z.map_or_else(|| e.z.clone(), Tensor::stop_gradient);
    let wz = source.mul(&w.reshape(&[v_count, n_count, 1])?)?;
    let wz = if stop_grad { wz.stop_gradient() } else { wz };
    let center = wz.sum_axis(0, false)?;

    let mut total: Option<Tensor> = None;
    for a in 0..v_count {
        let mask_a: Vec<bool> = (0..n_count)
            .map(|n| multi[n] && e.mask.is_present(a, n))
            .collect();
        if !mask_a.iter().any(|&m| m) {
            continue;
        }
        let za = e.view(a)?;
        let wz_a = wz.index_select(0, &[a])?.reshape(&[n_count, c])?;
        let center_a = center.sub(&wz_a)?;
        let pl = pair_loss_counted(&za, &center_a, &mask_a, tau, ledger)?;
        let row = w.index_select(0, &[a])?.reshape(&[n_count])?;
        let factor = row.neg().add_scalar(1.0);
        let term = pl.per_sample.mul(&factor)?.sum();
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    let total = total.unwrap_or_else(|| Tensor::scalar(0.0));
    Ok(total.scale(1.0 / ((v_count - 1) as f64 * n_multi as f64)))
}

/// Mean of [`pair_loss`] over all unordered view pairs that share at least
/// one sample.
pub fn full_graph_loss(e: &EmbeddingSet, tau: f64, ledger: &mut PairCountLedger) -> Result<Tensor> {
    check_temperature(tau)?;
    let v_count = e.num_views();
    if v_count < 2 {
        return Err(Error::Config(alloc::format!(
            "full graph loss needs at least 2 views, got {v_count}"
        )));
    }
    let views: Vec<Tensor> = (0..v_count).map(|v| e.view(v)).collect::<Result<_>>()?;
    let mut total: Option<Tensor> = None;
    let mut pairs = 0usize;
    for a in 0..v_count {
        for b in a + 1..v_count {
            let mask_ab: Vec<bool> = (0..e.num_samples())
                .map(|n| e.mask.is_present(a, n) && e.mask.is_present(b, n))
                .collect();
            if !mask_ab.iter().any(|&m| m) {
                continue;
            }
            let pl = pair_loss_counted(&views[a], &views[b], &mask_ab, tau, ledger)?;
            pairs += 1;
            total = Some(match total {
                Some(t) => t.add(&pl.mean)?,
                None => pl.mean,
            });
        }
    }
    Ok(match total {
        Some(t) => t.scale(1.0 / pairs as f64),
        None => Tensor::scalar(0.0),
    })
}

/// Which multiview loss to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    FullGraph,
    AdjustedCenter,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::FullGraph => "full_graph",
            LossKind::AdjustedCenter => "adjusted_center",
        }
    }

    /// Evaluates the loss; weights are only used by the adjusted center loss.
    pub fn evaluate(
        self,
        e: &EmbeddingSet,
        w: &Tensor,
        tau: f64,
        ledger: &mut PairCountLedger,
    ) -> Result<Tensor> {
        match self {
            LossKind::FullGraph => full_graph_loss(e, tau, ledger),
            LossKind::AdjustedCenter => adjusted_center_loss(e, w, tau, ledger),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_graph" => Ok(LossKind::FullGraph),
            "adjusted_center" => Ok(LossKind::AdjustedCenter),
            other => Err(Error::Config(alloc::format!("unknown loss kind `{other}`"))),
        }
    }
}

/// Deterministic benchmark inputs: fully present, mag-normalized Gaussian
/// embeddings and uniform weights.
pub fn bench_inputs(
    num_views: usize,
    num_samples: usize,
    dim: usize,
    seed: u64,
) -> Result<(EmbeddingSet, Tensor)> {
    let mut rng = seeded(seed);
    let raw: Vec<f64> = (0..num_views * num_samples * dim)
        .map(|_| standard_normal(&mut rng))
        .collect();
    let z = geometry::mag_norm(&Tensor::from_vec(raw, &[num_views, num_samples, dim])?)?;
    let w = Tensor::full(
        &[num_views, num_samples],
        1.0 / num_views as f64,
    );
    let e = EmbeddingSet::new(z.into_tensor(), PresenceMask::all_present(num_samples, num_views))?;
    Ok((e, w))
}

/// Randomized instance for property checks: mag-normalized Gaussian
/// embeddings, an optional random mask (every sample keeps at least one
/// view; absent slices are zero) and random positive weights normalized over
/// the present views.
pub fn random_instance(
    num_views: usize,
    num_samples: usize,
    dim: usize,
    masked: bool,
    seed: u64,
) -> Result<(EmbeddingSet, Tensor)> {
    use rand::Rng as _;

    let mut rng = seeded(seed);
    let mut bits = vec![true; num_samples * num_views];
    if masked {
        for n in 0..num_samples {
            let row = &mut bits[n * num_views..(n + 1) * num_views];
            for b in row.iter_mut() {
                *b = rng.random::<f64>() < 0.7;
            }
            if !row.iter().any(|&b| b) {
                row[rng.random_range(0..num_views)] = true;
            }
        }
    }
    let mask = PresenceMask::new(num_samples, num_views, bits)?;
    let raw: Vec<f64> = (0..num_views * num_samples * dim)
        .map(|_| standard_normal(&mut rng))
        .collect();
    let mut z = geometry::mag_norm(&Tensor::from_vec(raw, &[num_views, num_samples, dim])?)?
        .into_tensor()
        .to_vec();
    let mut w = vec![0.0; num_views * num_samples];
    for n in 0..num_samples {
        let mut sum = 0.0;
        for v in 0..num_views {
            if mask.is_present(v, n) {
                let x = 0.05 + rng.random::<f64>();
                w[v * num_samples + n] = x;
                sum += x;
            } else {
                z[(v * num_samples + n) * dim..(v * num_samples + n + 1) * dim]
                    .iter_mut()
                    .for_each(|x| *x = 0.0);
            }
        }
        for v in 0..num_views {
            w[v * num_samples + n] /= sum;
        }
    }
    let e = EmbeddingSet::new(Tensor::from_vec(z, &[num_views, num_samples, dim])?, mask)?;
    Ok((e, Tensor::from_vec(w, &[num_views, num_samples])?))
}

#[cfg(test)]
mod tests;
