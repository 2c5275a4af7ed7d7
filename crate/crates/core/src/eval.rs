//! Metrics and analyses: macro F1, view-subset sweeps, expert usage and
//! view-weight summaries.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ViewBatch};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::seeded;

/// Unweighted mean of per-class F1. A class that appears in neither the
/// predictions nor the labels scores 0.
pub fn macro_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyBatch("macro_f1 needs at least one prediction"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "macro_f1",
            lhs: vec![predictions.len()],
            rhs: vec![labels.len()],
        });
    }
    if num_classes == 0 {
        return Err(Error::Config("macro_f1 needs at least one class".into()));
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c >= num_classes) {
        return Err(Error::IndexOutOfBounds {
            index: bad,
            size: num_classes,
        });
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[l] += 1;
        }
    }
    let total: f64 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / num_classes as f64)
}

/// All `k`-element subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Population mean and standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

/// Anything that classifies a batch using only a subset of its views.
pub trait Classifier {
    fn num_views(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// One class per sample. Every sample needs a present view in `subset`.
    fn predict(&self, batch: &ViewBatch, subset: &[usize]) -> Result<Vec<usize>>;
}

/// Scores of one view combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboScore {
    pub views: Vec<usize>,
    /// Samples with at least one present view in the combination.
    pub samples: usize,
    pub macro_f1: f64,
}

/// Result of evaluating every (or a sampled set of) size-`k` view
/// combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub k: usize,
    pub combos: Vec<ComboScore>,
    pub mean: f64,
    pub std: f64,
}

/// Evaluates the model on size-`k` view subsets. Under missing views `k`
/// is an upper bound: each sample is scored with whichever of the subset's
/// views it has, and samples with none of them are left out of that
/// combination. With `max_combos`, at most that many combinations are drawn
/// (seeded, without replacement) and evaluated in index order.
pub fn subset_sweep(
    model: &dyn Classifier,
    ds: &Dataset,
    k: usize,
    max_combos: Option<usize>,
    seed: u64,
) -> Result<SweepResult> {
    let v = model.num_views();
    if k == 0 || k > v {
        return Err(Error::Config(format!("k must lie in 1..={v}, got {k}")));
    }
    if ds.num_views() != v {
        return Err(Error::Config(format!(
            "model has {v} views, dataset has {}",
            ds.num_views()
        )));
    }
    let labeled = ds.labeled_indices();
    if labeled.is_empty() {
        return Err(Error::EmptyBatch("test set has no labeled samples"));
    }
    let mut combos = combinations(v, k);
    if let Some(cap) = max_combos {
        if cap == 0 {
            return Err(Error::Config("max_combos must be positive".into()));
        }
        if cap < combos.len() {
            let mut chosen = sample(&mut seeded(seed), combos.len(), cap).into_vec();
            chosen.sort_unstable();
            combos = chosen.into_iter().map(|i| combos[i].clone()).collect();
        }
    }

    let mut scores = Vec::with_capacity(combos.len());
    for subset in combos {
        let rows: Vec<usize> = labeled
            .iter()
            .copied()
            .filter(|&i| subset.iter().any(|&s| ds.mask.is_present(s, i)))
            .collect();
        if rows.is_empty() {
            log::warn!("combination {subset:?} has no evaluable samples; skipped");
            continue;
        }
        let batch = ds.batch(&rows);
        let predictions = model.predict(&batch, &subset)?;
        let truth: Vec<usize> = rows.iter().map(|&i| ds.labels[i].expect("labeled")).collect();
        scores.push(ComboScore {
            macro_f1: macro_f1(&predictions, &truth, model.num_classes())?,
            samples: rows.len(),
            views: subset,
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyBatch("no combination had evaluable samples"));
    }
    let values: Vec<f64> = scores.iter().map(|s| s.macro_f1).collect();
    let (mean, std) = mean_std(&values);
    Ok(SweepResult {
        k,
        combos: scores,
        mean,
        std,
    })
}

/// Expert usage per view combination, each row in percent summing to 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertUsage {
    /// Row labels, e.g. `wrist` or `wrist+ankle`.
    pub labels: Vec<String>,
    /// Views of each row.
    pub combos: Vec<Vec<usize>>,
    pub rows: Vec<Vec<f64>>,
}

impl ExpertUsage {
    /// Builds the table from raw per-row gate-weight totals.
    pub fn from_totals(labels: Vec<String>, combos: Vec<Vec<usize>>, totals: Vec<Vec<f64>>) -> Self {
        let rows = totals
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter()
                    .map(|x| if s > 0.0 { 100.0 * x / s } else { 0.0 })
                    .collect()
            })
            .collect();
        Self {
            labels,
            combos,
            rows,
        }
    }

    pub fn num_experts(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Mean Jensen–Shannon divergence over all (one-view row, multi-view
    /// row) pairs.
    pub fn mean_one_vs_multi_js(&self) -> Result<f64> {
        let one: Vec<&Vec<f64>> = self.row_iter(|c| c == 1).collect();
        let multi: Vec<&Vec<f64>> = self.row_iter(|c| c > 1).collect();
        if one.is_empty() || multi.is_empty() {
            return Err(Error::Config(
                "need both one-view and multi-view rows".into(),
            ));
        }
        let mut total = 0.0;
        for a in &one {
            for b in &multi {
                total += js_divergence(a, b)?;
            }
        }
        Ok(total / (one.len() * multi.len()) as f64)
    }

    fn row_iter(&self, keep: impl Fn(usize) -> bool) -> impl Iterator<Item = &Vec<f64>> {
        self.combos
            .iter()
            .zip(&self.rows)
            .filter(move |(c, _)| keep(c.len()))
            .map(|(_, r)| r)
    }
}

/// Jensen–Shannon divergence (natural log) between two nonnegative vectors,
/// each normalized to a distribution first.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "js_divergence",
            lhs: vec![p.len()],
            rhs: vec![q.len()],
        });
    }
    let norm = |x: &[f64]| -> Result<Vec<f64>> {
        let s: f64 = x.iter().sum();
        if !(s > 0.0) || x.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Config("distribution must be nonnegative with positive mass".into()));
        }
        Ok(x.iter().map(|v| v / s).collect())
    };
    let (p, q) = (norm(p)?, norm(q)?);
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * math::ln(x / y))
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(0.5 * kl(&p, &m) + 0.5 * kl(&q, &m))
}

/// Multi-view combinations used as expert-usage rows: every subset of size
/// at least two, or, when there are more than `max_rows` of them, a seeded
/// sample that always contains the full set.
pub fn multiview_rows(num_views: usize, max_rows: usize, seed: u64) -> Vec<Vec<usize>> {
    let all: Vec<Vec<usize>> = (2..=num_views)
        .flat_map(|k| combinations(num_views, k))
        .collect();
    if all.len() <= max_rows || max_rows == 0 {
        return all;
    }
    let full = all.len() - 1;
    let mut chosen = sample(&mut seeded(seed), full, max_rows - 1).into_vec();
    chosen.push(full);
    chosen.sort_unstable();
    chosen.into_iter().map(|i| all[i].clone()).collect()
}

/// Per-epoch view-weight summary derived from a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightCurve {
    pub epochs: Vec<usize>,
    /// `[epoch][view]` mean attention weight.
    pub weights: Vec<Vec<f64>>,
    /// Contrastive loss per epoch, absent when the run had no contrastive
    /// term.
    pub l_ac: Option<Vec<f64>>,
}

impl WeightCurve {
    /// Cross-view population standard deviation of the mean weights per
    /// epoch.
    pub fn spread(&self) -> Vec<f64> {
        self.weights.iter().map(|w| mean_std(w).1).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macro_f1_cases() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(macro_f1(&[1, 0], &[0, 1], 2).unwrap(), 0.0);
        let f = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert!((f - 11.0 / 15.0).abs() < 1e-12);
        // an unseen class counts as zero
        assert!((macro_f1(&[0, 1], &[0, 1], 3).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(macro_f1(&[], &[], 2).is_err());
        assert!(macro_f1(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn macro_f1_is_invariant_to_relabeling() {
        let p = [0, 2, 1, 1, 2, 0, 0];
        let l = [0, 1, 1, 2, 2, 0, 1];
        let perm = [2, 0, 1];
        let pp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
        let lp: Vec<usize> = l.iter().map(|&c| perm[c]).collect();
        let a = macro_f1(&p, &l, 3).unwrap();
        let b = macro_f1(&pp, &lp, 3).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn combination_counts() {
        assert_eq!(combinations(5, 3).len(), 10);
        assert_eq!(combinations(5, 5), vec![vec![0, 1, 2, 3, 4]]);
        assert_eq!(combinations(9, 5).len(), 126);
        assert_eq!(combinations(3, 1), vec![vec![0], vec![1], vec![2]]);
        assert!(combinations(2, 3).is_empty());
    }

    #[test]
    fn js_values() {
        assert_eq!(js_divergence(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 0.0);
        let d = js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((d - core::f64::consts::LN_2).abs() < 1e-12);
        assert!(js_divergence(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn usage_rows_are_percentages() {
        let u = ExpertUsage::from_totals(
            vec!["a".into(), "b".into(), "a+b".into()],
            vec![vec![0], vec![1], vec![0, 1]],
            vec![vec![1.0, 3.0], vec![2.0, 2.0], vec![0.5, 0.5]],
        );
        for r in &u.rows {
            assert!((r.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        }
        let js = u.mean_one_vs_multi_js().unwrap();
        assert!(js.is_finite() && js > 0.0);
    }

    #[test]
    fn multiview_rows_cap_keeps_full_set() {
        assert_eq!(multiview_rows(3, 32, 0).len(), 4);
        let rows = multiview_rows(9, 20, 1);
        assert_eq!(rows.len(), 20);
        assert!(rows.contains(&(0..9).collect::<Vec<_>>()));
        assert_eq!(rows, multiview_rows(9, 20, 1));
    }
}
