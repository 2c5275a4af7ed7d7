//! Wall-clock timing of the multiview contrastive losses.
//!
//! One trial is a forward and a backward pass on fixed inputs. Trials run
//! back to back on the calling thread after a few untimed warmup passes;
//! the median and interquartile range summarize them.

use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use aliad_core::contrastive::{bench_inputs, EmbeddingSet, LossKind, PairCountLedger};
use aliad_core::Tensor;
use serde::Serialize;

use crate::error::{Error, Result};

/// Smallest accepted warmup and trial counts.
pub const MIN_WARMUP: usize = 2;
pub const MIN_TRIALS: usize = 5;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub losses: Vec<LossKind>,
    pub views: Vec<usize>,
    pub batches: Vec<usize>,
    pub dim: usize,
    pub warmup: usize,
    pub trials: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            losses: vec![LossKind::FullGraph, LossKind::AdjustedCenter],
            views: (2..=9).collect(),
            batches: vec![16, 32, 64, 128],
            dim: 64,
            warmup: 3,
            trials: 15,
            tau: 0.1,
            seed: 0,
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub loss_kind: &'static str,
    #[serde(rename = "V")]
    pub views: usize,
    #[serde(rename = "N")]
    pub batch: usize,
    #[serde(rename = "C")]
    pub dim: usize,
    pub trials: usize,
    pub median_ns: f64,
    pub iqr_ns: f64,
    /// Pair-loss evaluations in one forward pass.
    pub pair_evals: u64,
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `(median, interquartile range)`.
pub fn median_iqr(samples: &[f64]) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    (quantile(&s, 0.5), quantile(&s, 0.75) - quantile(&s, 0.25))
}

fn pass(kind: LossKind, e: &EmbeddingSet, w: &Tensor, tau: f64) -> Result<PairCountLedger> {
    // fresh leaves so the backward pass has parameters to reach
    let z = Tensor::param(e.z.to_vec(), e.z.shape())?;
    let set = EmbeddingSet::new(z, e.mask.clone())?;
    let mut ledger = PairCountLedger::default();
    let loss = kind.evaluate(&set, w, tau, &mut ledger)?;
    black_box(loss.backward()?);
    Ok(ledger)
}

/// Times one loss at one size.
pub fn time_loss(
    kind: LossKind,
    views: usize,
    batch: usize,
    dim: usize,
    warmup: usize,
    trials: usize,
    tau: f64,
    seed: u64,
) -> Result<BenchRow> {
    if warmup < MIN_WARMUP || trials < MIN_TRIALS {
        return Err(aliad_core::Error::Config(format!(
            "need at least {MIN_WARMUP} warmup passes and {MIN_TRIALS} trials"
        ))
        .into());
    }
    let (e, w) = bench_inputs(views, batch, dim, seed)?;
    let mut ledger = PairCountLedger::default();
    for _ in 0..warmup {
        ledger = pass(kind, &e, &w, tau)?;
    }
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        pass(kind, &e, &w, tau)?;
        times.push(start.elapsed().as_nanos() as f64);
    }
    let (median_ns, iqr_ns) = median_iqr(&times);
    Ok(BenchRow {
        loss_kind: kind.as_str(),
        views,
        batch,
        dim,
        trials,
        median_ns,
        iqr_ns,
        pair_evals: ledger.pair_loss_evaluations,
    })
}

/// Every `(loss, V, N)` combination in loss, view, batch order.
pub fn run(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &kind in &cfg.losses {
        for &v in &cfg.views {
            for &n in &cfg.batches {
                let row = time_loss(kind, v, n, cfg.dim, cfg.warmup, cfg.trials, cfg.tau, cfg.seed)?;
                log::info!("{kind} V={v} N={n}: median {:.0} ns", row.median_ns);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn write_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    for row in rows {
        w.serialize(row).map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}

/// Parses `2..9` (inclusive), `4` or `2,3,5`.
pub fn parse_usize_list(text: &str) -> std::result::Result<Vec<usize>, String> {
    let text = text.trim();
    let bad = |t: &str| format!("`{t}` is not a count, range `a..b` or list `a,b,c`");
    if let Some((a, b)) = text.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b): (usize, usize) = (
            a.trim().parse().map_err(|_| bad(text))?,
            b.trim().parse().map_err(|_| bad(text))?,
        );
        if a > b {
            return Err(format!("empty range `{text}`"));
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|t| t.trim().parse().map_err(|_| bad(text)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let (m, iqr) = median_iqr(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(m, 3.0);
        assert_eq!(iqr, 2.0);
        let (m, _) = median_iqr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
    }

    #[test]
    fn lists_and_ranges() {
        assert_eq!(parse_usize_list("2..9").unwrap(), (2..=9).collect::<Vec<_>>());
        assert_eq!(parse_usize_list("3..=4").unwrap(), vec![3, 4]);
        assert_eq!(parse_usize_list("16,32, 64").unwrap(), vec![16, 32, 64]);
        assert_eq!(parse_usize_list("7").unwrap(), vec![7]);
        assert!(parse_usize_list("9..2").is_err());
        assert!(parse_usize_list("a,b").is_err());
    }

    #[test]
    fn rows_count_pairs() {
        let ac = time_loss(LossKind::AdjustedCenter, 5, 8, 4, 2, 5, 0.1, 0).unwrap();
        let fg = time_loss(LossKind::FullGraph, 5, 8, 4, 2, 5, 0.1, 0).unwrap();
        assert_eq!(ac.pair_evals, 5);
        assert_eq!(fg.pair_evals, 10);
        assert!(ac.median_ns > 0.0 && ac.iqr_ns >= 0.0);
        assert!(time_loss(LossKind::FullGraph, 3, 4, 4, 1, 5, 0.1, 0).is_err());
    }
}
