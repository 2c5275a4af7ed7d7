use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::Dataset;
use crate::error::{Error, Result};
use crate::math;
use crate::rng::seeded;

/// Per-view drop probability `10^(-3/V)` under which all `V` views of a
/// sample vanish together with probability `1e-3`.
pub fn uniform_drop_probability(num_views: usize) -> f64 {
    math::powf(10.0, -3.0 / num_views.max(1) as f64)
}

/// Drops each present `(sample, view)` independently with probability
/// [`uniform_drop_probability`], then removes samples left without views.
pub fn drop_views_uniform(ds: &Dataset, seed: u64) -> Dataset {
    let p = uniform_drop_probability(ds.num_views());
    apply_drops(ds, &vec![p; ds.num_views()], seed)
}

/// Drops each view at its own rate. Rates must lie in `[0, 1)`.
pub fn drop_views_rates(ds: &Dataset, rates: &[f64], seed: u64) -> Result<Dataset> {
    if rates.len() != ds.num_views() {
        return Err(Error::Config(alloc::format!(
            "{} drop rates for {} views",
            rates.len(),
            ds.num_views()
        )));
    }
    if let Some((v, r)) = rates
        .iter()
        .enumerate()
        .find(|(_, r)| !(0.0..1.0).contains(*r))
    {
        return Err(Error::Config(alloc::format!(
            "drop rate {r} for view {v} outside [0, 1)"
        )));
    }
    Ok(apply_drops(ds, rates, seed))
}

/// Orders a `{view name: rate}` map by the dataset's views. Every view must
/// be named exactly once.
pub fn rates_from_map(map: &BTreeMap<String, f64>, view_names: &[&str]) -> Result<Vec<f64>> {
    if let Some(extra) = map.keys().find(|k| !view_names.contains(&k.as_str())) {
        return Err(Error::Config(alloc::format!(
            "drop rate given for unknown view `{extra}`"
        )));
    }
    view_names
        .iter()
        .map(|name| {
            map.get(*name)
                .copied()
                .ok_or_else(|| Error::Config(alloc::format!("no drop rate for view `{name}`")))
        })
        .collect()
}

fn apply_drops(ds: &Dataset, rates: &[f64], seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let mut out = ds.clone();
    for n in 0..ds.num_samples() {
        for (v, &p) in rates.iter().enumerate() {
            // one draw per entry keeps the stream aligned across masks
            let dropped = rng.random::<f64>() < p;
            if dropped {
                out.mask.set(v, n, false);
            }
        }
    }
    out.zero_absent();
    out.remove_empty()
}

/// Empirical outcome of a drop simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct DropStats {
    pub samples: usize,
    pub per_view_drop_rate: Vec<f64>,
    pub pooled_drop_rate: f64,
    pub all_dropped_rate: f64,
}

/// Runs the Bernoulli drop process on `samples` fully present rows without
/// materializing a dataset.
pub fn simulate_drops(rates: &[f64], samples: usize, seed: u64) -> DropStats {
    let mut rng = seeded(seed);
    let mut dropped = vec![0usize; rates.len()];
    let mut all = 0usize;
    for _ in 0..samples {
        let mut count = 0;
        for (v, &p) in rates.iter().enumerate() {
            if rng.random::<f64>() < p {
                dropped[v] += 1;
                count += 1;
            }
        }
        if count == rates.len() {
            all += 1;
        }
    }
    let n = samples.max(1) as f64;
    let total: usize = dropped.iter().sum();
    DropStats {
        samples,
        per_view_drop_rate: dropped.iter().map(|&d| d as f64 / n).collect(),
        pooled_drop_rate: total as f64 / (n * rates.len().max(1) as f64),
        all_dropped_rate: all as f64 / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Modality, PresenceMask, ViewInfo};

    fn toy(n: usize, v: usize) -> Dataset {
        let views = (0..v)
            .map(|k| ViewInfo {
                name: alloc::format!("v{k}"),
                modality: Modality::Inertial,
                channels: 1,
            })
            .collect();
        let data = (0..v).map(|k| (0..n).map(|i| (i * 10 + k) as f64).collect()).collect();
        let labels = (0..n).map(|i| Some(i % 2)).collect();
        Dataset::new(views, 1, 2, data, labels, PresenceMask::all_present(n, v)).unwrap()
    }

    #[test]
    fn drop_probabilities() {
        assert!((uniform_drop_probability(5) - 0.251_188_643_150_958).abs() < 1e-12);
        assert!((uniform_drop_probability(1) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn zero_rates_leave_dataset_unchanged() {
        let ds = toy(20, 3);
        assert_eq!(drop_views_rates(&ds, &[0.0; 3], 1).unwrap(), ds);
    }

    #[test]
    fn rate_of_one_is_rejected() {
        assert!(drop_views_rates(&toy(4, 2), &[1.0, 0.0], 1).is_err());
    }

    #[test]
    fn dropping_keeps_order_and_labels() {
        let ds = toy(200, 3);
        let out = drop_views_rates(&ds, &[0.9, 0.9, 0.9], 7).unwrap();
        assert!(out.num_samples() < 200);
        // view 0 values encode the source row; absent entries were zeroed
        let mut last = None;
        for i in 0..out.num_samples() {
            let v = out.mask.present_views(i)[0];
            let src = (out.sample(v, i)[0] as usize - v) / 10;
            assert_eq!(out.labels[i], Some(src % 2));
            assert!(last.is_none_or(|l| src > l));
            last = Some(src);
            assert!(out.mask.present_count(i) > 0);
        }
    }

    #[test]
    fn high_rate_concentration() {
        let s = simulate_drops(&[0.99], 10_000, 3);
        assert!((0.97..1.0).contains(&s.per_view_drop_rate[0]));
    }

    #[test]
    fn named_rates() {
        let mut m = BTreeMap::new();
        m.insert("a".into(), 0.2);
        m.insert("b".into(), 0.5);
        assert_eq!(rates_from_map(&m, &["b", "a"]).unwrap(), [0.5, 0.2]);
        assert!(rates_from_map(&m, &["a"]).is_err());
        assert!(rates_from_map(&m, &["a", "b", "c"]).is_err());
    }
}
