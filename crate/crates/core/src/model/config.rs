use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moe::GateConfig;
use crate::tensor::Precision;

/// Variant switches. Each flag removes or swaps one component; they combine
/// freely.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Replace the mixture-of-experts head with a single shared MLP.
    pub no_moe: bool,
    /// Drop the contrastive term.
    pub no_contrast: bool,
    /// Uniform `1/|present|` view weights instead of learned attention.
    pub no_attention: bool,
    /// Skip magnitude normalization of view and fused embeddings.
    pub no_magnorm: bool,
    /// Classify and balance on the fused token only.
    pub no_individual_views: bool,
    /// One balancing term over all tokens instead of one per token group.
    pub no_separate_load: bool,
    /// Let classification gradients reach the encoders through the
    /// attention input.
    pub no_stop_grad: bool,
    /// Contrast every view pair instead of views against weighted centers.
    pub full_graph: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 8] = [
        "no_moe",
        "no_contrast",
        "no_attention",
        "no_magnorm",
        "no_individual_views",
        "no_separate_load",
        "no_stop_grad",
        "full_graph",
    ];

    fn flag_mut(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "no_moe" => &mut self.no_moe,
            "no_contrast" => &mut self.no_contrast,
            "no_attention" => &mut self.no_attention,
            "no_magnorm" => &mut self.no_magnorm,
            "no_individual_views" => &mut self.no_individual_views,
            "no_separate_load" => &mut self.no_separate_load,
            "no_stop_grad" => &mut self.no_stop_grad,
            "full_graph" => &mut self.full_graph,
            _ => return None,
        })
    }

    /// Sets the named flag.
    pub fn enable(&mut self, name: &str) -> Result<()> {
        let flag = self
            .flag_mut(name.trim())
            .ok_or_else(|| Error::Config(format!("unknown ablation `{name}`")))?;
        *flag = true;
        Ok(())
    }

    /// Parses a comma-separated list such as `no_moe,full_graph`.
    pub fn parse_list(list: &str) -> Result<Self> {
        let mut out = Self::default();
        for name in list.split(',').filter(|s| !s.trim().is_empty()) {
            out.enable(name)?;
        }
        Ok(out)
    }

    /// Names of the enabled flags.
    pub fn enabled(&self) -> Vec<&'static str> {
        let mut copy = *self;
        Self::NAMES
            .iter()
            .copied()
            .filter(|n| *copy.flag_mut(n).expect("known name"))
            .collect()
    }
}

impl fmt::Display for Ablations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = self.enabled();
        if names.is_empty() {
            f.write_str("full")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

/// Model, loss and training settings. Every field has a default, so a
/// config file only needs to list what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AliAdConfig {
    /// Output channels of each residual block; the last entry is the
    /// embedding size `C`.
    pub encoder_channels: Vec<usize>,
    /// Convolution kernel size (odd).
    pub kernel_size: usize,
    /// Views with the same modality and channel count share one encoder.
    pub share_encoders: bool,
    /// Explicit encoder index per view, overriding `share_encoders`.
    pub encoder_groups: Option<Vec<usize>>,
    pub gate: GateConfig,
    pub cls_weight: f64,
    pub contrast_weight: f64,
    pub balance_weight: f64,
    pub temperature: f64,
    pub learning_rate: f64,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub epochs: usize,
    /// Fraction of labeled rows held out for checkpoint selection when the
    /// caller does not supply a validation set.
    pub val_fraction: f64,
    pub augment: bool,
    pub precision: Precision,
    pub seed: u64,
    pub ablations: Ablations,
}

impl Default for AliAdConfig {
    fn default() -> Self {
        Self {
            encoder_channels: vec![32, 64, 64, 64],
            kernel_size: 5,
            share_encoders: true,
            encoder_groups: None,
            gate: GateConfig::default(),
            cls_weight: 1.0,
            contrast_weight: 1.0,
            balance_weight: 1e-2,
            temperature: 0.1,
            learning_rate: 1e-3,
            labeled_batch: 16,
            unlabeled_batch: 16,
            epochs: 20,
            val_fraction: 0.2,
            augment: true,
            precision: Precision::F64,
            seed: 0,
            ablations: Ablations::default(),
        }
    }
}

impl AliAdConfig {
    /// A small configuration that trains in seconds on one core: four
    /// blocks of widths `(8, 16, 16, 16)`, eight experts with top-2.
    pub fn desk_scale() -> Self {
        Self {
            encoder_channels: vec![8, 16, 16, 16],
            gate: GateConfig {
                num_experts: 8,
                top_k: 2,
                noise_enabled: true,
            },
            ..Self::default()
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder_channels.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return bad("encoder needs at least one block of positive width".into());
        }
        if self.embed_dim() < 2 {
            return bad(format!("embedding size must be at least 2, got {}", self.embed_dim()));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return bad(format!("kernel size must be odd, got {}", self.kernel_size));
        }
        self.gate.validate()?;
        for (name, w) in [
            ("cls_weight", self.cls_weight),
            ("contrast_weight", self.contrast_weight),
            ("balance_weight", self.balance_weight),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return bad(format!("{name} must be a finite nonnegative number, got {w}"));
            }
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.labeled_batch == 0 {
            return bad("labeled batch size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }
}
