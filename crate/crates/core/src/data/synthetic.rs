//! Synthetic multiview activity data.
//!
//! Each class owns a smooth latent trajectory (`latent_dim` channels, each a
//! smoothed sum of three random sinusoids) four windows long. Windows cut
//! from it at half-window stride are the class templates. A view sees a
//! template through its own fixed random linear projection and adds white
//! Gaussian noise whose variance is the view's mean signal power divided by
//! its SNR, so the SNR is the per-view quality knob.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{sliding_window_raw, Dataset, Modality, PresenceMask, ViewInfo};
use crate::error::{Error, Result};
use crate::math;
use crate::nn::standard_normal;
use crate::rng::{derive_seed, seeded};

const PROTOTYPE_WINDOWS: usize = 4;
const SINUSOIDS: usize = 3;

fn default_latent_dim() -> usize {
    3
}

/// Generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_views: usize,
    pub num_classes: usize,
    /// Channels per view.
    pub channels: Vec<usize>,
    pub modalities: Vec<Modality>,
    /// View names; `view_<k>` when omitted.
    #[serde(default)]
    pub view_names: Option<Vec<String>>,
    pub window: usize,
    pub samples_per_class: usize,
    /// Signal-to-noise power ratio per view; `f64::INFINITY` means noiseless.
    pub snr: Vec<f64>,
    #[serde(default)]
    pub unlabeled_fraction: f64,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `num_views` 3-axis inertial views with a common SNR.
    pub fn inertial(num_views: usize, num_classes: usize, snr: f64, seed: u64) -> Self {
        Self {
            num_views,
            num_classes,
            channels: vec![3; num_views],
            modalities: vec![Modality::Inertial; num_views],
            view_names: None,
            window: 32,
            samples_per_class: 40,
            snr: vec![snr; num_views],
            unlabeled_fraction: 0.0,
            latent_dim: default_latent_dim(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_views == 0 {
            return bad("need at least one view".into());
        }
        if self.num_classes < 2 {
            return bad("need at least two classes".into());
        }
        if self.channels.len() != self.num_views
            || self.modalities.len() != self.num_views
            || self.snr.len() != self.num_views
        {
            return bad("channels, modalities and snr need one entry per view".into());
        }
        if let Some(names) = &self.view_names {
            if names.len() != self.num_views {
                return bad("view_names needs one entry per view".into());
            }
        }
        for (v, (&c, m)) in self.channels.iter().zip(&self.modalities).enumerate() {
            if c == 0 || c % m.group() != 0 {
                return bad(alloc::format!(
                    "view {v}: {c} channels do not fit modality {m}"
                ));
            }
        }
        if let Some(s) = self.snr.iter().find(|s| !(**s > 0.0)) {
            return bad(alloc::format!("snr must be positive, got {s}"));
        }
        if self.window < 2 || self.latent_dim == 0 || self.samples_per_class == 0 {
            return bad("window >= 2, latent_dim >= 1 and samples_per_class >= 1 required".into());
        }
        if !(0.0..1.0).contains(&self.unlabeled_fraction) {
            return bad("unlabeled_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }

    fn view_name(&self, v: usize) -> String {
        self.view_names
            .as_ref()
            .map_or_else(|| alloc::format!("view_{v}"), |n| n[v].clone())
    }
}

/// Per-class template windows, each `[latent_dim, window]`.
fn class_templates(spec: &SyntheticSpec) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut rng = seeded(derive_seed(spec.seed, 1));
    let len = PROTOTYPE_WINDOWS * spec.window;
    let t_scale = 2.0 * core::f64::consts::PI / spec.window as f64;
    (0..spec.num_classes)
        .map(|_| {
            let mut proto = vec![0.0; spec.latent_dim * len];
            for d in 0..spec.latent_dim {
                let row = &mut proto[d * len..(d + 1) * len];
                for _ in 0..SINUSOIDS {
                    let freq = 0.5 + 2.5 * rng.random::<f64>();
                    let amp = 0.5 + 0.5 * rng.random::<f64>();
                    let phase = 2.0 * core::f64::consts::PI * rng.random::<f64>();
                    for (t, x) in row.iter_mut().enumerate() {
                        *x += amp * math::sin(freq * t_scale * t as f64 + phase);
                    }
                }
                // 3-tap moving average
                let raw = row.to_vec();
                for t in 0..len {
                    let lo = t.saturating_sub(1);
                    let hi = (t + 1).min(len - 1);
                    row[t] = raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
                }
            }
            sliding_window_raw(&proto, spec.latent_dim, spec.window, (spec.window / 2).max(1))
        })
        .collect()
}

/// Fixed `[channels, latent_dim]` projection per view.
fn projections(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let mut rng = seeded(derive_seed(spec.seed, 2));
    let scale = 1.0 / math::sqrt(spec.latent_dim as f64);
    spec.channels
        .iter()
        .map(|&c| {
            (0..c * spec.latent_dim)
                .map(|_| scale * standard_normal(&mut rng))
                .collect()
        })
        .collect()
}

fn project(p: &[f64], latent: &[f64], channels: usize, dim: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels * len];
    for c in 0..channels {
        for d in 0..dim {
            let w = p[c * dim + d];
            for t in 0..len {
                out[c * len + t] += w * latent[d * len + t];
            }
        }
    }
    out
}

/// Noiseless view-space templates: `[view][class][template] -> [channels, window]`.
fn view_templates(spec: &SyntheticSpec) -> Result<Vec<Vec<Vec<Vec<f64>>>>> {
    let latent = class_templates(spec)?;
    let proj = projections(spec);
    Ok((0..spec.num_views)
        .map(|v| {
            latent
                .iter()
                .map(|class| {
                    class
                        .iter()
                        .map(|w| project(&proj[v], w, spec.channels[v], spec.latent_dim, spec.window))
                        .collect()
                })
                .collect()
        })
        .collect())
}

/// Generates a fully present dataset, deterministic per `spec.seed`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let templates = view_templates(spec)?;
    let per_class = templates[0][0].len();

    let noise_sd: Vec<f64> = (0..spec.num_views)
        .map(|v| {
            let all: Vec<f64> = templates[v].iter().flatten().flatten().copied().collect();
            let power = all.iter().map(|x| x * x).sum::<f64>() / all.len() as f64;
            math::sqrt(power / spec.snr[v])
        })
        .collect();

    let mut rng = seeded(derive_seed(spec.seed, 3));
    // (class, template) per sample
    let mut rows = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for c in 0..spec.num_classes {
        for _ in 0..spec.samples_per_class {
            rows.push((c, rng.random_range(0..per_class)));
        }
    }
    rows.shuffle(&mut rng);

    let n = rows.len();
    let mut data: Vec<Vec<f64>> = (0..spec.num_views)
        .map(|v| Vec::with_capacity(n * spec.channels[v] * spec.window))
        .collect();
    for &(c, j) in &rows {
        for v in 0..spec.num_views {
            let sd = noise_sd[v];
            for &x in &templates[v][c][j] {
                let noisy = if sd > 0.0 { x + sd * standard_normal(&mut rng) } else { x };
                // stored at single precision so files round-trip exactly
                data[v].push(noisy as f32 as f64);
            }
        }
    }

    let mut labels: Vec<Option<usize>> = rows.iter().map(|&(c, _)| Some(c)).collect();
    let unlabeled = (spec.unlabeled_fraction * n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for &i in &order[..unlabeled] {
        labels[i] = None;
    }

    let views = (0..spec.num_views)
        .map(|v| ViewInfo {
            name: spec.view_name(v),
            modality: spec.modalities[v],
            channels: spec.channels[v],
        })
        .collect();
    Dataset::new(
        views,
        spec.window,
        spec.num_classes,
        data,
        labels,
        PresenceMask::all_present(n, spec.num_views),
    )
}

/// Accuracy of the nearest-template classifier over the labeled rows of
/// `ds`, comparing present views only against the generator's noiseless
/// templates of every class.
pub fn nearest_prototype_accuracy(ds: &Dataset, spec: &SyntheticSpec) -> Result<f64> {
    spec.validate()?;
    let templates = view_templates(spec)?;
    let labeled = ds.labeled_indices();
    if labeled.is_empty() {
        return Err(Error::EmptyBatch("no labeled samples"));
    }
    let mut correct = 0usize;
    for &i in &labeled {
        let present = ds.mask.present_views(i);
        let mut best = (f64::INFINITY, 0usize);
        for c in 0..spec.num_classes {
            for j in 0..templates[0][c].len() {
                let d: f64 = present
                    .iter()
                    .map(|&v| {
                        ds.sample(v, i)
                            .iter()
                            .zip(&templates[v][c][j])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                    })
                    .sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
        }
        if Some(best.1) == ds.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / labeled.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let spec = SyntheticSpec::inertial(3, 4, 2.0, 17);
        assert_eq!(gen_synthetic(&spec).unwrap(), gen_synthetic(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 18;
        assert_ne!(gen_synthetic(&spec).unwrap(), gen_synthetic(&other).unwrap());
    }

    #[test]
    fn noiseless_data_is_perfectly_classified_by_templates() {
        let spec = SyntheticSpec::inertial(2, 5, f64::INFINITY, 4);
        let ds = gen_synthetic(&spec).unwrap();
        assert_eq!(nearest_prototype_accuracy(&ds, &spec).unwrap(), 1.0);
    }

    #[test]
    fn shape_and_labels() {
        let mut spec = SyntheticSpec::inertial(2, 3, 5.0, 1);
        spec.channels = vec![3, 4];
        spec.modalities = vec![Modality::Inertial, Modality::Pose2d];
        spec.unlabeled_fraction = 0.5;
        let ds = gen_synthetic(&spec).unwrap();
        assert_eq!(ds.num_samples(), 120);
        assert_eq!(ds.data[1].len(), 120 * 4 * 32);
        assert_eq!(ds.unlabeled_indices().len(), 60);
        assert!(ds.data[0].iter().all(|&x| x == x as f32 as f64));
    }

    #[test]
    fn holdout_takes_only_labeled_rows() {
        let mut spec = SyntheticSpec::inertial(2, 3, 2.0, 4);
        spec.samples_per_class = 10;
        spec.unlabeled_fraction = 0.3;
        let ds = gen_synthetic(&spec).unwrap();
        let labeled = ds.labeled_indices().len();
        let (train, val) = ds.holdout_labeled(0.25, 1);
        let val = val.unwrap();
        assert_eq!(val.num_samples(), (0.25 * labeled as f64).round() as usize);
        assert!(val.labels.iter().all(Option::is_some));
        assert_eq!(train.unlabeled_indices().len(), ds.unlabeled_indices().len());
        assert_eq!(train.num_samples() + val.num_samples(), ds.num_samples());
        assert_eq!(ds.holdout_labeled(0.25, 1).1.unwrap(), val);
        assert!(ds.holdout_labeled(0.0, 1).1.is_none());
    }

    #[test]
    fn invalid_specs() {
        let mut s = SyntheticSpec::inertial(2, 3, 1.0, 0);
        s.snr[1] = 0.0;
        assert!(gen_synthetic(&s).is_err());
        let mut s = SyntheticSpec::inertial(2, 1, 1.0, 0);
        assert!(gen_synthetic(&s).is_err());
        s.num_classes = 2;
        s.channels[0] = 4;
        assert!(gen_synthetic(&s).is_err());
    }
}
