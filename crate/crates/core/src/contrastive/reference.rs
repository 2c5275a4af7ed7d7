//! Literal nested-loop evaluations used as test oracles. They share no code
//! with the tensor implementations beyond the scalar critic.

use alloc::vec;
use alloc::vec::Vec;

use super::{check_weights, multiview_samples, EmbeddingSet};
use crate::error::{Error, Result};
use crate::geometry::{check_temperature, critic};
use crate::math;
use crate::tensor::Tensor;

/// Per-sample two-view loss over the samples with `mask` set, evaluating
/// every critic term of both directions one by one. `za` and `zb` are
/// row-major `[N, C]`. Excluded samples get `0`.
pub fn pair_loss_reference(
    za: &[f64],
    zb: &[f64],
    dim: usize,
    mask: &[bool],
    tau: f64,
) -> Result<Vec<f64>> {
    check_temperature(tau)?;
    let n = mask.len();
    let row = |z: &[f64], i: usize| z[i * dim..(i + 1) * dim].to_vec();
    let mut out = vec![0.0; n];
    for i in (0..n).filter(|&i| mask[i]) {
        let mut sample = 0.0;
        for (anchor, other) in [(za, zb), (zb, za)] {
            let zi = row(anchor, i);
            let positive = critic(&zi, &row(other, i), tau)?;
            let mut denom = 0.0;
            for j in (0..n).filter(|&j| mask[j]) {
                // v = other view: always included
                denom += critic(&zi, &row(other, j), tau)?;
                // v = anchor view: included unless j == i
                if j != i {
                    denom += critic(&zi, &row(anchor, j), tau)?;
                }
            }
            sample += -math::ln(positive / denom);
        }
        out[i] = sample;
    }
    Ok(out)
}

/// Adjusted center loss with each view's center recomputed from scratch as
/// `sum_{v != a} w[v] z[v]`, i.e. the quadratic-in-`V` form.
pub fn adjusted_center_loss_reference(e: &EmbeddingSet, w: &Tensor, tau: f64) -> Result<f64> {
    check_temperature(tau)?;
    let (v_count, n_count, c) = (e.num_views(), e.num_samples(), e.dim());
    if v_count < 2 {
        return Err(Error::Config(alloc::format!(
            "adjusted center loss needs at least 2 views, got {v_count}"
        )));
    }
    check_weights(&e.mask, w)?;
    let z = e.z.data();
    let wd = w.data();
    let multi = multiview_samples(&e.mask);
    let n_multi = multi.iter().filter(|&&m| m).count();
    if n_multi == 0 {
        return Ok(0.0);
    }

    let mut total = 0.0;
    for a in 0..v_count {
        let mask_a: Vec<bool> = (0..n_count)
            .map(|n| multi[n] && e.mask.is_present(a, n))
            .collect();
        if !mask_a.iter().any(|&m| m) {
            continue;
        }
        let za: Vec<f64> = z[a * n_count * c..(a + 1) * n_count * c].to_vec();
        let mut centers = vec![0.0; n_count * c];
        for n in 0..n_count {
            for v in (0..v_count).filter(|&v| v != a && e.mask.is_present(v, n)) {
                let wv = wd[v * n_count + n];
                for k in 0..c {
                    centers[n * c + k] += wv * z[(v * n_count + n) * c + k];
                }
            }
        }
        let per = pair_loss_reference(&za, &centers, c, &mask_a, tau)?;
        for n in 0..n_count {
            if mask_a[n] {
                total += (1.0 - wd[a * n_count + n]) * per[n];
            }
        }
    }
    Ok(total / ((v_count - 1) as f64 * n_multi as f64))
}
