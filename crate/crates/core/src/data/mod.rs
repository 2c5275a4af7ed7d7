//! Multiview datasets: presence masks, minibatches, the synthetic generator,
//! windowing, missing-view simulation and augmentation.

mod augment;
mod drop;
mod synthetic;
mod window;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::tensor::Tensor;

const SPLIT_TAG: u64 = 0x5350_4c49_54;
const HOLDOUT_TAG: u64 = 0x484f_4c44;

pub use augment::{augment, augment_with, time_warp_map, AugmentParams};
pub use drop::{
    drop_views_rates, drop_views_uniform, rates_from_map, simulate_drops, uniform_drop_probability,
    DropStats,
};
pub use synthetic::{gen_synthetic, nearest_prototype_accuracy, SyntheticSpec};
pub use window::{sliding_window, sliding_window_raw};

/// Sensor type and layout of a view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    /// 3-axis inertial sensor (channels in groups of 3).
    Inertial,
    /// 2-D skeleton, `K x 2` channels as `(x, y)` per joint.
    Pose2d,
    /// 3-D skeleton, `K x 3` channels as `(x, y, z)` per joint.
    Pose3d,
}

impl Modality {
    /// Channels per spatial vector (3 for inertial and 3-D pose, 2 for 2-D pose).
    pub fn group(self) -> usize {
        match self {
            Modality::Pose2d => 2,
            Modality::Inertial | Modality::Pose3d => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Inertial => "inertial",
            Modality::Pose2d => "pose2d",
            Modality::Pose3d => "pose3d",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inertial" => Ok(Modality::Inertial),
            "pose2d" => Ok(Modality::Pose2d),
            "pose3d" => Ok(Modality::Pose3d),
            other => Err(Error::Data(alloc::format!("unknown modality tag `{other}`"))),
        }
    }
}

/// Static description of one view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewInfo {
    pub name: String,
    pub modality: Modality,
    pub channels: usize,
}

/// Which views are present for each sample, stored sample-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceMask {
    num_samples: usize,
    num_views: usize,
    bits: Vec<bool>,
}

impl PresenceMask {
    /// `rows` is sample-major: entry `n * num_views + v`.
    pub fn new(num_samples: usize, num_views: usize, rows: Vec<bool>) -> Result<Self> {
        if rows.len() != num_samples * num_views {
            return Err(Error::ShapeMismatch {
                op: "presence_mask",
                lhs: vec![rows.len()],
                rhs: vec![num_samples, num_views],
            });
        }
        Ok(Self {
            num_samples,
            num_views,
            bits: rows,
        })
    }

    pub fn all_present(num_samples: usize, num_views: usize) -> Self {
        Self {
            num_samples,
            num_views,
            bits: vec![true; num_samples * num_views],
        }
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_views(&self) -> usize {
        self.num_views
    }

    pub fn is_present(&self, view: usize, sample: usize) -> bool {
        self.bits[sample * self.num_views + view]
    }

    pub fn set(&mut self, view: usize, sample: usize, present: bool) {
        self.bits[sample * self.num_views + view] = present;
    }

    pub fn row(&self, sample: usize) -> &[bool] {
        &self.bits[sample * self.num_views..(sample + 1) * self.num_views]
    }

    /// Presence of `view` for every sample.
    pub fn view_column(&self, view: usize) -> Vec<bool> {
        (0..self.num_samples)
            .map(|n| self.is_present(view, n))
            .collect()
    }

    pub fn present_count(&self, sample: usize) -> usize {
        self.row(sample).iter().filter(|&&b| b).count()
    }

    pub fn present_views(&self, sample: usize) -> Vec<usize> {
        self.row(sample)
            .iter()
            .enumerate()
            .filter_map(|(v, &b)| b.then_some(v))
            .collect()
    }

    /// Indices of samples where `view` is present.
    pub fn present_samples(&self, view: usize) -> Vec<usize> {
        (0..self.num_samples)
            .filter(|&n| self.is_present(view, n))
            .collect()
    }

    /// `[V, N]` tensor of 0/1 values.
    pub fn to_tensor(&self) -> Tensor {
        let mut out = vec![0.0; self.num_views * self.num_samples];
        for n in 0..self.num_samples {
            for v in 0..self.num_views {
                if self.is_present(v, n) {
                    out[v * self.num_samples + n] = 1.0;
                }
            }
        }
        Tensor::from_vec(out, &[self.num_views, self.num_samples]).expect("mask shape")
    }

    /// Same mask with every view outside `subset` marked absent.
    pub fn restrict_to(&self, subset: &[usize]) -> Self {
        let mut out = self.clone();
        for n in 0..self.num_samples {
            for v in 0..self.num_views {
                if !subset.contains(&v) {
                    out.set(v, n, false);
                }
            }
        }
        out
    }

    pub fn select_samples(&self, indices: &[usize]) -> Self {
        let mut bits = Vec::with_capacity(indices.len() * self.num_views);
        for &i in indices {
            bits.extend_from_slice(self.row(i));
        }
        Self {
            num_samples: indices.len(),
            num_views: self.num_views,
            bits,
        }
    }

    /// First sample without any present view.
    pub fn first_empty(&self) -> Option<usize> {
        (0..self.num_samples).find(|&n| self.present_count(n) == 0)
    }

    /// Joins masks of the same view count sample-wise.
    pub fn concat(parts: &[&PresenceMask]) -> Result<Self> {
        let v = parts.first().map_or(0, |p| p.num_views);
        let mut bits = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.num_views != v {
                return Err(Error::ShapeMismatch {
                    op: "mask_concat",
                    lhs: vec![v],
                    rhs: vec![p.num_views],
                });
            }
            bits.extend_from_slice(&p.bits);
            n += p.num_samples;
        }
        Self::new(n, v, bits)
    }
}

/// A minibatch: one `[N, channels, T]` tensor per view plus presence and
/// optional labels. Values at absent positions are ignored by the model.
#[derive(Debug, Clone)]
pub struct ViewBatch {
    pub views: Vec<Tensor>,
    pub mask: PresenceMask,
    pub labels: Vec<Option<usize>>,
}

impl ViewBatch {
    pub fn num_samples(&self) -> usize {
        self.mask.num_samples()
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|_| i))
            .collect()
    }
}

/// An in-memory multiview dataset.
///
/// Per-view values are stored flat in `[sample, channel, time]` order.
/// Absent `(sample, view)` entries hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub views: Vec<ViewInfo>,
    pub window: usize,
    pub num_classes: usize,
    pub data: Vec<Vec<f64>>,
    pub labels: Vec<Option<usize>>,
    pub mask: PresenceMask,
}

impl Dataset {
    /// Builds and validates a dataset.
    pub fn new(
        views: Vec<ViewInfo>,
        window: usize,
        num_classes: usize,
        data: Vec<Vec<f64>>,
        labels: Vec<Option<usize>>,
        mask: PresenceMask,
    ) -> Result<Self> {
        let ds = Self {
            views,
            window,
            num_classes,
            data,
            labels,
            mask,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.views.is_empty() {
            return Err(Error::Data("dataset has no views".into()));
        }
        if self.data.len() != self.views.len() {
            return Err(Error::Data(alloc::format!(
                "{} data blocks for {} views",
                self.data.len(),
                self.views.len()
            )));
        }
        if self.mask.num_samples() != n || self.mask.num_views() != self.views.len() {
            return Err(Error::Data("mask shape does not match dataset".into()));
        }
        for (v, (info, block)) in self.views.iter().zip(&self.data).enumerate() {
            if block.len() != n * info.channels * self.window {
                return Err(Error::Data(alloc::format!(
                    "view {v}: expected {} values, found {}",
                    n * info.channels * self.window,
                    block.len()
                )));
            }
        }
        if let Some((i, y)) = self
            .labels
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.filter(|&y| y >= self.num_classes).map(|y| (i, y)))
        {
            return Err(Error::Data(alloc::format!(
                "sample {i}: label {y} outside [0, {})",
                self.num_classes
            )));
        }
        if let Some(i) = self.mask.first_empty() {
            return Err(Error::NoPresentViews { sample: i });
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    /// Values per sample for view `v`.
    pub fn sample_len(&self, v: usize) -> usize {
        self.views[v].channels * self.window
    }

    pub fn sample(&self, v: usize, i: usize) -> &[f64] {
        let len = self.sample_len(v);
        &self.data[v][i * len..(i + 1) * len]
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.num_samples())
            .filter(|&i| self.labels[i].is_some())
            .collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.num_samples())
            .filter(|&i| self.labels[i].is_none())
            .collect()
    }

    /// Rows `indices` in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let data = (0..self.num_views())
            .map(|v| {
                let mut block = Vec::with_capacity(indices.len() * self.sample_len(v));
                for &i in indices {
                    block.extend_from_slice(self.sample(v, i));
                }
                block
            })
            .collect();
        Dataset {
            views: self.views.clone(),
            window: self.window,
            num_classes: self.num_classes,
            data,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            mask: self.mask.select_samples(indices),
        }
    }

    /// Copy with every label removed.
    pub fn without_labels(&self) -> Dataset {
        let mut out = self.clone();
        out.labels.iter_mut().for_each(|l| *l = None);
        out
    }

    /// Seeded random partition into consecutive chunks with the given
    /// fractions; the last part takes the remainder.
    pub fn split(&self, fractions: &[f64], seed: u64) -> Vec<Dataset> {
        let mut order: Vec<usize> = (0..self.num_samples()).collect();
        order.shuffle(&mut seeded(derive_seed(seed, SPLIT_TAG)));
        let n = order.len();
        let mut parts = Vec::with_capacity(fractions.len() + 1);
        let mut start = 0;
        for &f in fractions {
            let len = ((f * n as f64) as usize).min(n - start);
            let mut idx = order[start..start + len].to_vec();
            idx.sort_unstable();
            parts.push(self.select(&idx));
            start += len;
        }
        let mut rest = order[start..].to_vec();
        rest.sort_unstable();
        parts.push(self.select(&rest));
        parts
    }

    /// Moves a seeded `fraction` of the labeled rows into a validation set.
    /// Unlabeled rows always stay in the training part, and at least one
    /// labeled row is kept for training. Returns `None` for the validation
    /// set when it would be empty.
    pub fn holdout_labeled(&self, fraction: f64, seed: u64) -> (Dataset, Option<Dataset>) {
        let mut labeled = self.labeled_indices();
        let n_val = ((fraction * labeled.len() as f64).round() as usize)
            .min(labeled.len().saturating_sub(1));
        if n_val == 0 {
            return (self.clone(), None);
        }
        labeled.shuffle(&mut seeded(derive_seed(seed, HOLDOUT_TAG)));
        let mut val = labeled[..n_val].to_vec();
        val.sort_unstable();
        let train: Vec<usize> = (0..self.num_samples())
            .filter(|i| val.binary_search(i).is_err())
            .collect();
        (self.select(&train), Some(self.select(&val)))
    }

    /// Minibatch of rows `indices`.
    pub fn batch(&self, indices: &[usize]) -> ViewBatch {
        let sub = self.select(indices);
        let views = sub
            .data
            .into_iter()
            .zip(&self.views)
            .map(|(block, info)| {
                Tensor::from_vec(block, &[indices.len(), info.channels, self.window])
                    .expect("validated block size")
            })
            .collect();
        ViewBatch {
            views,
            mask: sub.mask,
            labels: sub.labels,
        }
    }

    /// Whole dataset as one batch.
    pub fn full_batch(&self) -> ViewBatch {
        let all: Vec<usize> = (0..self.num_samples()).collect();
        self.batch(&all)
    }

    /// Zeroes the values of absent entries so they carry no information.
    pub(crate) fn zero_absent(&mut self) {
        for v in 0..self.num_views() {
            let len = self.sample_len(v);
            for i in 0..self.num_samples() {
                if !self.mask.is_present(v, i) {
                    self.data[v][i * len..(i + 1) * len]
                        .iter_mut()
                        .for_each(|x| *x = 0.0);
                }
            }
        }
    }

    /// Drops samples with no present view, keeping the order of the rest.
    pub(crate) fn remove_empty(&self) -> Dataset {
        let keep: Vec<usize> = (0..self.num_samples())
            .filter(|&i| self.mask.present_count(i) > 0)
            .collect();
        self.select(&keep)
    }
}
