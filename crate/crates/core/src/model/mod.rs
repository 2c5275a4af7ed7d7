//! The AliAd assembly.
//!
//! Each present view goes through its encoder and lands on the radius-√C
//! hypersphere. An attention network scores the views of every sample, the
//! weighted sum of the view embeddings is normalized again, and the
//! classification head sees the fused token plus every individual view
//! token. Training combines cross-entropy on labeled samples, the adjusted
//! center contrastive loss on all samples, and expert load balancing for the
//! one-view and fused token groups separately.

mod config;
mod encoder;
mod train;


use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::contrastive::{adjusted_center_loss, full_graph_loss, EmbeddingSet, PairCountLedger};
use crate::data::{Dataset, Modality, PresenceMask, ViewBatch, ViewInfo};
use crate::error::{Error, Result};
use crate::eval::{multiview_rows, Classifier, ExpertUsage};
use crate::fusion::{attention_weights, uniform_weights, weighted_fusion, AttentionNet, AttentionWeights};
use crate::geometry::mag_norm;
use crate::moe::{load_balancing_loss, GateOutput, MoeHead};
use crate::nn::{Mlp, Module, Param};
use crate::rng::{derive_seed, seeded, Rng};
use crate::tensor::Tensor;

pub use config::{Ablations, AliAdConfig};
pub use encoder::{Encoder, EncoderConfig, ResBlock};
pub use train::{train, EpochRecord, TrainOutcome, TrainReport};

const INIT_TAG: u64 = 0x494e_4954;
/// Samples per forward pass at inference.
const INFERENCE_CHUNK: usize = 256;

/// Classification head: the mixture of experts, or a single MLP under the
/// `no_moe` ablation.
#[derive(Debug, Clone)]
pub enum Head {
    Moe(MoeHead),
    Mlp(Mlp),
}

/// Result of one training forward pass.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Weighted sum of the enabled components.
    pub total: Tensor,
    pub l_cls: Tensor,
    pub l_ac: Tensor,
    pub l_lb: Tensor,
    /// Batch rows that carry a label, in order.
    pub labeled: Vec<usize>,
    /// `[labeled, M]` fused-token logits.
    pub fused_logits: Option<Tensor>,
    /// Individual-view logits, one row per entry of `view_tokens`.
    pub view_logits: Option<Tensor>,
    /// `(view, batch row)` of each individual-view token.
    pub view_tokens: Vec<(usize, usize)>,
    pub weights: AttentionWeights,
    pub gate: Option<GateOutput>,
    pub ledger: PairCountLedger,
}

/// Averaged cross-entropy where each labeled sample contributes
/// `(H(fused) + Σ_{v∈S} H(view v)) / (|S| + 1)` over its present views `S`.
///
/// `view_owner[i]` is the row of `fused_logits` (i.e. the labeled sample)
/// that view token `i` belongs to.
pub fn classification_loss(
    fused_logits: &Tensor,
    view_logits: Option<(&Tensor, &[usize])>,
    labels: &[usize],
) -> Result<Tensor> {
    let l = labels.len();
    if l == 0 {
        return Ok(Tensor::scalar(0.0));
    }
    let mut views_per_sample = vec![0usize; l];
    if let Some((_, owner)) = view_logits {
        for &o in owner {
            views_per_sample[o] += 1;
        }
    }
    let coef = |o: usize| 1.0 / ((views_per_sample[o] + 1) as f64 * l as f64);
    let fused_coef = Tensor::from_vec((0..l).map(coef).collect(), &[l])?;
    let mut loss = fused_logits.cross_entropy(labels)?.mul(&fused_coef)?.sum();
    if let Some((logits, owner)) = view_logits {
        if !owner.is_empty() {
            let targets: Vec<usize> = owner.iter().map(|&o| labels[o]).collect();
            let c = Tensor::from_vec(owner.iter().map(|&o| coef(o)).collect(), &[owner.len()])?;
            loss = loss.add(&logits.cross_entropy(&targets)?.mul(&c)?.sum())?;
        }
    }
    Ok(loss)
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let m = logits.shape()[1];
    logits
        .data()
        .chunks(m)
        .map(|row| {
            (0..m)
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .expect("at least one class")
        })
        .collect()
}

/// The full model.
#[derive(Debug, Clone)]
pub struct AliAd {
    pub config: AliAdConfig,
    pub views: Vec<ViewInfo>,
    pub num_classes: usize,
    pub window: usize,
    pub encoders: Vec<Encoder>,
    /// Encoder index of each view.
    pub view_encoder: Vec<usize>,
    pub attention: AttentionNet,
    pub head: Head,
}

impl AliAd {
    /// Fresh model with parameters drawn from `config.seed`.
    pub fn new(
        views: Vec<ViewInfo>,
        num_classes: usize,
        window: usize,
        config: AliAdConfig,
    ) -> Result<Self> {
        config.validate()?;
        if views.is_empty() {
            return Err(Error::Config("model needs at least one view".into()));
        }
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        if views.len() < 2 && !config.ablations.no_contrast {
            return Err(Error::Config(
                "the contrastive term needs at least 2 views; enable no_contrast".into(),
            ));
        }
        let view_encoder = Self::assign_encoders(&views, &config)?;
        let mut rng = seeded(derive_seed(config.seed, INIT_TAG));
        let groups = view_encoder.iter().max().map_or(0, |g| g + 1);
        let encoders = (0..groups)
            .map(|g| {
                let v = view_encoder.iter().position(|&e| e == g).expect("dense groups");
                Encoder::new(
                    &format!("encoder{g}"),
                    EncoderConfig {
                        in_channels: views[v].channels,
                        channels: config.encoder_channels.clone(),
                        kernel_size: config.kernel_size,
                        window,
                    },
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let c = config.embed_dim();
        let attention = AttentionNet::new(c, &mut rng);
        let head = if config.ablations.no_moe {
            Head::Mlp(Mlp::new("head", c, c, num_classes, &mut rng))
        } else {
            Head::Moe(MoeHead::new(c, num_classes, config.gate, &mut rng)?)
        };
        Ok(Self {
            config,
            views,
            num_classes,
            window,
            encoders,
            view_encoder,
            attention,
            head,
        })
    }

    /// Model shaped for `ds`.
    pub fn for_dataset(ds: &Dataset, config: AliAdConfig) -> Result<Self> {
        Self::new(ds.views.clone(), ds.num_classes, ds.window, config)
    }

    fn assign_encoders(views: &[ViewInfo], config: &AliAdConfig) -> Result<Vec<usize>> {
        if let Some(groups) = &config.encoder_groups {
            if groups.len() != views.len() {
                return Err(Error::Config(format!(
                    "encoder_groups has {} entries for {} views",
                    groups.len(),
                    views.len()
                )));
            }
            let count = groups.iter().max().map_or(0, |g| g + 1);
            for g in 0..count {
                let members: Vec<usize> = (0..views.len()).filter(|&v| groups[v] == g).collect();
                let Some(&first) = members.first() else {
                    return Err(Error::Config(format!("encoder group {g} has no views")));
                };
                if members.iter().any(|&v| views[v].channels != views[first].channels) {
                    return Err(Error::Config(format!(
                        "encoder group {g} mixes channel counts"
                    )));
                }
            }
            return Ok(groups.clone());
        }
        if !config.share_encoders {
            return Ok((0..views.len()).collect());
        }
        let mut keys: Vec<(Modality, usize)> = Vec::new();
        Ok(views
            .iter()
            .map(|v| {
                let key = (v.modality, v.channels);
                keys.iter().position(|k| *k == key).unwrap_or_else(|| {
                    keys.push(key);
                    keys.len() - 1
                })
            })
            .collect())
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim()
    }

    fn magnorm(&self) -> bool {
        !self.config.ablations.no_magnorm
    }

    /// Encodes the entries present in `mask`; absent entries are zero.
    pub fn embed(&self, batch: &ViewBatch, mask: &PresenceMask) -> Result<EmbeddingSet> {
        if batch.num_views() != self.num_views() || mask.num_views() != self.num_views() {
            return Err(Error::ShapeMismatch {
                op: "embed",
                lhs: vec![batch.num_views(), mask.num_views()],
                rhs: vec![self.num_views()],
            });
        }
        let (n, c) = (mask.num_samples(), self.embed_dim());
        let mut per_view = Vec::with_capacity(self.num_views());
        for (v, x) in batch.views.iter().enumerate() {
            let rows = mask.present_samples(v);
            let z = if rows.is_empty() {
                Tensor::zeros(&[n, c])
            } else {
                let encoder = &self.encoders[self.view_encoder[v]];
                encoder
                    .encode(&x.index_select(0, &rows)?, self.magnorm())?
                    .scatter(0, &rows, n)?
            };
            per_view.push(z.reshape(&[1, n, c])?);
        }
        EmbeddingSet::new(Tensor::concat(&per_view, 0)?, mask.clone())
    }

    /// Attention weights (uniform under `no_attention`).
    pub fn view_weights(&self, e: &EmbeddingSet) -> Result<AttentionWeights> {
        if self.config.ablations.no_attention {
            uniform_weights(&e.mask)
        } else {
            attention_weights(e, &self.attention, !self.config.ablations.no_stop_grad)
        }
    }

    /// Fused embedding `[N, C]`, normalized unless `no_magnorm`.
    pub fn fuse(&self, e: &EmbeddingSet, w: &AttentionWeights) -> Result<Tensor> {
        let f = weighted_fusion(e, w)?;
        if self.magnorm() {
            Ok(mag_norm(&f)?.into_tensor())
        } else {
            Ok(f)
        }
    }

    /// Head logits for `tokens`, with the gate output for the MoE head.
    pub fn head_logits(
        &self,
        tokens: &Tensor,
        train: bool,
        rng: &mut Rng,
    ) -> Result<(Tensor, Option<GateOutput>)> {
        match &self.head {
            Head::Moe(h) => {
                let (y, g) = h.forward(tokens, train, rng)?;
                Ok((y, Some(g)))
            }
            Head::Mlp(m) => Ok((m.forward(tokens)?, None)),
        }
    }

    /// One training forward pass. Classification uses the labeled rows of
    /// the batch; the contrastive term uses every row.
    pub fn forward_train(&self, batch: &ViewBatch, rng: &mut Rng) -> Result<StepOutput> {
        let ab = self.config.ablations;
        let n = batch.num_samples();
        if n == 0 {
            return Err(Error::EmptyBatch("training batch is empty"));
        }
        if let Some(sample) = batch.mask.first_empty() {
            return Err(Error::NoPresentViews { sample });
        }
        let e = self.embed(batch, &batch.mask)?;
        let weights = self.view_weights(&e)?;
        let fused = self.fuse(&e, &weights)?;

        let labeled = batch.labeled_indices();
        let labels: Vec<usize> = labeled.iter().map(|&i| batch.labels[i].expect("labeled")).collect();
        let mut view_tokens = Vec::new();
        if !ab.no_individual_views {
            for &s in &labeled {
                for v in batch.mask.present_views(s) {
                    view_tokens.push((v, s));
                }
            }
        }

        let (mut l_cls, mut l_lb) = (Tensor::scalar(0.0), Tensor::scalar(0.0));
        let (mut fused_logits, mut view_logits, mut gate) = (None, None, None);
        if labeled.is_empty() {
            log::warn!("batch has no labeled samples; classification loss is 0");
        } else {
            let c = self.embed_dim();
            let flat = e.z.reshape(&[self.num_views() * n, c])?;
            let rows: Vec<usize> = view_tokens.iter().map(|&(v, s)| v * n + s).collect();
            let fused_tokens = fused.index_select(0, &labeled)?;
            let tokens = if rows.is_empty() {
                fused_tokens
            } else {
                Tensor::concat(&[flat.index_select(0, &rows)?, fused_tokens], 0)?
            };
            let (logits, g) = self.head_logits(&tokens, true, rng)?;
            let i = rows.len();
            let ind: Vec<usize> = (0..i).collect();
            let fus: Vec<usize> = (i..i + labeled.len()).collect();
            let fl = logits.index_select(0, &fus)?;
            let vl = (i > 0).then(|| logits.index_select(0, &ind)).transpose()?;
            let owner: Vec<usize> = view_tokens
                .iter()
                .map(|&(_, s)| labeled.binary_search(&s).expect("labeled row"))
                .collect();
            l_cls = classification_loss(&fl, vl.as_ref().map(|t| (t, owner.as_slice())), &labels)?;
            if let Some(g) = &g {
                l_lb = if ab.no_separate_load {
                    g.balance_loss()?
                } else {
                    let one = (i > 0).then(|| g.subset(&ind)).transpose()?;
                    load_balancing_loss(one.as_ref(), Some(&g.subset(&fus)?))?
                };
            }
            fused_logits = Some(fl);
            view_logits = vl;
            gate = g;
        }

        let mut ledger = PairCountLedger::default();
        let l_ac = if ab.no_contrast {
            Tensor::scalar(0.0)
        } else if ab.full_graph {
            full_graph_loss(&e, self.config.temperature, &mut ledger)?
        } else {
            adjusted_center_loss(&e, &weights.w, self.config.temperature, &mut ledger)?
        };

        let mut total = l_cls.scale(self.config.cls_weight);
        if !ab.no_contrast {
            total = total.add(&l_ac.scale(self.config.contrast_weight))?;
        }
        if !ab.no_moe {
            total = total.add(&l_lb.scale(self.config.balance_weight))?;
        }
        Ok(StepOutput {
            total,
            l_cls,
            l_ac,
            l_lb,
            labeled,
            fused_logits,
            view_logits,
            view_tokens,
            weights,
            gate,
            ledger,
        })
    }

    /// Fused-token logits `[N, M]` using only the views in `subset`.
    pub fn predict_logits(&self, batch: &ViewBatch, subset: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = subset.iter().find(|&&v| v >= self.num_views()) {
            return Err(Error::IndexOutOfBounds {
                index: bad,
                size: self.num_views(),
            });
        }
        let mask = batch.mask.restrict_to(subset);
        if let Some(sample) = mask.first_empty() {
            return Err(Error::NoPresentViews { sample });
        }
        let n = batch.num_samples();
        let mut parts = Vec::new();
        let mut rng = seeded(0);
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let rows: Vec<usize> = (start..(start + INFERENCE_CHUNK).min(n)).collect();
            let sub = ViewBatch {
                views: batch
                    .views
                    .iter()
                    .map(|x| x.index_select(0, &rows))
                    .collect::<Result<_>>()?,
                mask: mask.select_samples(&rows),
                labels: vec![None; rows.len()],
            };
            let e = self.embed(&sub, &sub.mask)?;
            let w = self.view_weights(&e)?;
            let fused = self.fuse(&e, &w)?;
            let (logits, _) = self.head_logits(&fused, false, &mut rng)?;
            parts.push(logits.stop_gradient());
        }
        Tensor::concat(&parts, 0)
    }

    /// Mean attention weight per view, overall and per class, over the
    /// present entries of `ds` (absent views count as weight 0).
    pub fn weight_summary(&self, ds: &Dataset) -> Result<(Vec<f64>, BTreeMap<usize, Vec<f64>>)> {
        let v = self.num_views();
        let mut overall = vec![0.0; v];
        let mut per_class: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
        let n = ds.num_samples();
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let rows: Vec<usize> = (start..(start + INFERENCE_CHUNK).min(n)).collect();
            let batch = ds.batch(&rows);
            let e = self.embed(&batch, &batch.mask)?;
            let w = self.view_weights(&e)?;
            for (i, &row) in rows.iter().enumerate() {
                let entry = ds.labels[row].map(|c| per_class.entry(c).or_insert((vec![0.0; v], 0)));
                let mut entry = entry;
                for (k, acc) in overall.iter_mut().enumerate() {
                    let wk = w.get(k, i);
                    *acc += wk;
                    if let Some((sum, _)) = entry.as_mut() {
                        sum[k] += wk;
                    }
                }
                if let Some((_, count)) = entry {
                    *count += 1;
                }
            }
        }
        overall.iter_mut().for_each(|x| *x /= n.max(1) as f64);
        let per_class = per_class
            .into_iter()
            .map(|(c, (sum, count))| (c, sum.into_iter().map(|s| s / count as f64).collect()))
            .collect();
        Ok((overall, per_class))
    }

    /// Expert usage per view combination: one row per single view, then one
    /// per multi-view combination (all of them, or `max_multi_rows` sampled
    /// with `seed`). A row aggregates the inference gate weights of the fused
    /// token over the samples that have every view of the combination.
    pub fn expert_usage(&self, ds: &Dataset, max_multi_rows: usize, seed: u64) -> Result<ExpertUsage> {
        let Head::Moe(head) = &self.head else {
            return Err(Error::Config(
                "model was trained without the mixture of experts; no usage to analyze".into(),
            ));
        };
        let v = self.num_views();
        let mut combos: Vec<Vec<usize>> = (0..v).map(|k| vec![k]).collect();
        combos.extend(multiview_rows(v, max_multi_rows, seed));
        let e_count = head.gate.config.num_experts;
        let mut labels = Vec::with_capacity(combos.len());
        let mut totals = Vec::with_capacity(combos.len());
        let mut rng = seeded(0);
        for combo in &combos {
            let rows: Vec<usize> = (0..ds.num_samples())
                .filter(|&i| combo.iter().all(|&k| ds.mask.is_present(k, i)))
                .collect();
            let mut total = vec![0.0; e_count];
            for chunk in rows.chunks(INFERENCE_CHUNK) {
                let batch = ds.batch(chunk);
                let mask = batch.mask.restrict_to(combo);
                let e = self.embed(&batch, &mask)?;
                let w = self.view_weights(&e)?;
                let fused = self.fuse(&e, &w)?;
                let g = head.gate.forward(&fused, false, &mut rng)?;
                for (t, x) in total.iter_mut().zip(g.importance.data()) {
                    *t += x;
                }
            }
            let names: Vec<&str> = combo.iter().map(|&k| self.views[k].name.as_str()).collect();
            labels.push(names.join("+"));
            totals.push(total);
        }
        Ok(ExpertUsage::from_totals(labels, combos, totals))
    }

    /// Parameter values keyed by name.
    pub fn parameters(&self) -> BTreeMap<String, (Vec<usize>, Vec<f64>)> {
        self.state()
    }
}

impl Classifier for AliAd {
    fn num_views(&self) -> usize {
        self.views.len()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict(&self, batch: &ViewBatch, subset: &[usize]) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_logits(batch, subset)?))
    }
}

impl Module for AliAd {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        for e in &self.encoders {
            e.visit(f);
        }
        self.attention.visit(f);
        match &self.head {
            Head::Moe(h) => h.visit(f),
            Head::Mlp(m) => m.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for e in &mut self.encoders {
            e.visit_mut(f);
        }
        self.attention.visit_mut(f);
        match &mut self.head {
            Head::Moe(h) => h.visit_mut(f),
            Head::Mlp(m) => m.visit_mut(f),
        }
    }
}
