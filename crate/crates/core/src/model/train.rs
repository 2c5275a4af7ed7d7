use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AliAd, AliAdConfig};
use crate::data::{augment, Dataset, PresenceMask, ViewBatch};
use crate::error::{Error, Result};
use crate::eval::{macro_f1, Classifier};
use crate::nn::{Adam, Module};
use crate::rng::{derive_seed, seeded};
use crate::tensor::{set_precision, Precision, Tensor};

const SHUFFLE_TAG: u64 = 0x5348_5546;
const NOISE_TAG: u64 = 0x4e4f_4953;
const AUGMENT_TAG: u64 = 0x4155_474d;

/// Statistics of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Step means of each loss component.
    pub l_cls: f64,
    /// `None` when the contrastive term is ablated.
    pub l_ac: Option<f64>,
    pub l_lb: f64,
    pub total: f64,
    /// Validation macro-F1 with all views, when a validation set is given.
    pub val_f1: Option<f64>,
    /// Mean attention weight per view over the training set after the epoch.
    pub w_mean: Vec<f64>,
    /// The same per class, over labeled training samples.
    pub class_w_mean: BTreeMap<usize, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    pub best_val_f1: Option<f64>,
    pub steps: usize,
}

/// The selected checkpoint and the training log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AliAd,
    pub report: TrainReport,
}

/// Restores the process-wide precision when dropped.
struct PrecisionGuard(Precision);

impl Drop for PrecisionGuard {
    fn drop(&mut self) {
        set_precision(self.0);
    }
}

/// Rows of `ds` as a batch, each present window augmented with its own
/// seed when `augment_seed` is set.
fn make_batch(ds: &Dataset, rows: &[usize], augment_seed: Option<u64>) -> Result<ViewBatch> {
    let Some(seed) = augment_seed else {
        return Ok(ds.batch(rows));
    };
    let v_count = ds.num_views();
    let mut views = Vec::with_capacity(v_count);
    for (v, info) in ds.views.iter().enumerate() {
        let len = ds.sample_len(v);
        let mut data = Vec::with_capacity(rows.len() * len);
        for (i, &row) in rows.iter().enumerate() {
            let x = ds.sample(v, row);
            if ds.mask.is_present(v, row) {
                let s = derive_seed(seed, (i * v_count + v) as u64);
                data.extend(augment(x, info.channels, info.modality, s)?);
            } else {
                data.extend_from_slice(x);
            }
        }
        views.push(Tensor::from_vec(data, &[rows.len(), info.channels, ds.window])?);
    }
    Ok(ViewBatch {
        views,
        mask: ds.mask.select_samples(rows),
        labels: rows.iter().map(|&r| ds.labels[r]).collect(),
    })
}

fn concat_batches(a: ViewBatch, b: ViewBatch) -> Result<ViewBatch> {
    let views = a
        .views
        .iter()
        .zip(&b.views)
        .map(|(x, y)| Tensor::concat(&[x.clone(), y.clone()], 0))
        .collect::<Result<Vec<_>>>()?;
    let mut labels = a.labels;
    labels.extend(b.labels);
    Ok(ViewBatch {
        views,
        mask: PresenceMask::concat(&[&a.mask, &b.mask])?,
        labels,
    })
}

/// Cycles through a pool of unlabeled rows in reshuffled passes.
struct UnlabeledStream {
    /// `(from_unlabeled_set, row)`
    pool: Vec<(bool, usize)>,
    order: Vec<usize>,
    pos: usize,
}

impl UnlabeledStream {
    fn next(&mut self, count: usize, rng: &mut crate::rng::Rng) -> Vec<(bool, usize)> {
        let mut out = Vec::with_capacity(count);
        if self.pool.is_empty() {
            return out;
        }
        for _ in 0..count.min(self.pool.len()) {
            if self.pos == self.order.len() {
                self.order = (0..self.pool.len()).collect();
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.pool[self.order[self.pos]]);
            self.pos += 1;
        }
        out
    }
}

fn validation_f1(model: &AliAd, val: &Dataset) -> Result<Option<f64>> {
    let rows = val.labeled_indices();
    if rows.is_empty() {
        return Ok(None);
    }
    let all: Vec<usize> = (0..val.num_views()).collect();
    let predictions = model.predict(&val.batch(&rows), &all)?;
    let truth: Vec<usize> = rows.iter().map(|&r| val.labels[r].expect("labeled")).collect();
    macro_f1(&predictions, &truth, val.num_classes).map(Some)
}

/// Trains a fresh model.
///
/// Every step draws one batch of labeled rows and one batch from the
/// unlabeled pool (the `unlabeled` set plus unlabeled rows of `labeled`).
/// Classification uses the labeled rows, the contrastive term both. The
/// parameters of the epoch with the best validation macro-F1 are kept; with
/// no validation set, those of the last epoch.
pub fn train(
    labeled: &Dataset,
    unlabeled: Option<&Dataset>,
    val: Option<&Dataset>,
    config: &AliAdConfig,
) -> Result<TrainOutcome> {
    let _guard = PrecisionGuard(set_precision(config.precision));
    let mut model = AliAd::for_dataset(labeled, config.clone())?;
    for other in unlabeled.into_iter().chain(val) {
        if other.views != labeled.views || other.window != labeled.window {
            return Err(Error::Data(
                "all datasets must share view layout and window length".into(),
            ));
        }
    }
    let label_rows = labeled.labeled_indices();
    if label_rows.is_empty() {
        return Err(Error::EmptyBatch("training set has no labeled samples"));
    }
    let mut pool: Vec<(bool, usize)> = labeled.unlabeled_indices().into_iter().map(|r| (false, r)).collect();
    if let Some(u) = unlabeled {
        pool.extend((0..u.num_samples()).map(|r| (true, r)));
    }
    let mut stream = UnlabeledStream {
        order: Vec::new(),
        pos: 0,
        pool,
    };

    let mut shuffle_rng = seeded(derive_seed(config.seed, SHUFFLE_TAG));
    let mut noise_rng = seeded(derive_seed(config.seed, NOISE_TAG));
    let augment_base = derive_seed(config.seed, AUGMENT_TAG);
    let mut adam = Adam::new(config.learning_rate);
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, BTreeMap<String, (Vec<usize>, Vec<f64>)>)> = None;
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let mut order = label_rows.clone();
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 4];
        let mut steps_in_epoch = 0usize;
        for chunk in order.chunks(config.labeled_batch) {
            let aug = |tag: u64| config.augment.then(|| derive_seed(augment_base, (step as u64) << 2 | tag));
            let mut batch = make_batch(labeled, chunk, aug(0))?;
            let extra = stream.next(config.unlabeled_batch, &mut shuffle_rng);
            let from_labeled: Vec<usize> = extra.iter().filter(|e| !e.0).map(|e| e.1).collect();
            let from_unlabeled: Vec<usize> = extra.iter().filter(|e| e.0).map(|e| e.1).collect();
            if !from_labeled.is_empty() {
                batch = concat_batches(batch, make_batch(labeled, &from_labeled, aug(1))?)?;
            }
            if let (Some(u), false) = (unlabeled, from_unlabeled.is_empty()) {
                batch = concat_batches(batch, make_batch(u, &from_unlabeled, aug(2))?)?;
            }

            let out = model.forward_train(&batch, &mut noise_rng)?;
            let parts = [out.total.item(), out.l_cls.item(), out.l_ac.item(), out.l_lb.item()];
            if parts.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged { step });
            }
            let grads = out.total.backward()?;
            adam.step(&mut model, &grads)?;
            for (s, p) in sums.iter_mut().zip(parts) {
                *s += p;
            }
            steps_in_epoch += 1;
            step += 1;
        }

        let mean = |i: usize| sums[i] / steps_in_epoch as f64;
        let (w_mean, class_w_mean) = model.weight_summary(labeled)?;
        let val_f1 = match val {
            Some(v) => validation_f1(&model, v)?,
            None => None,
        };
        let record = EpochRecord {
            epoch,
            l_cls: mean(1),
            l_ac: (!config.ablations.no_contrast).then(|| mean(2)),
            l_lb: mean(3),
            total: mean(0),
            val_f1,
            w_mean,
            class_w_mean,
        };
        log::info!(
            "epoch {epoch}: total {:.4} cls {:.4} ac {:?} lb {:.4} val_f1 {:?}",
            record.total,
            record.l_cls,
            record.l_ac,
            record.l_lb,
            record.val_f1
        );
        let score = val_f1.unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((b, _, _)) => val_f1.is_none() || score > *b,
        };
        if better {
            best = Some((score, epoch, model.state()));
        }
        records.push(record);
    }

    let (best_epoch, best_val_f1) = match best {
        Some((score, epoch, state)) => {
            model.load_state(&state)?;
            (epoch, score.is_finite().then_some(score))
        }
        None => (0, None),
    };
    Ok(TrainOutcome {
        model,
        report: TrainReport {
            epochs: records,
            best_epoch,
            best_val_f1,
            steps: step,
        },
    })
}
