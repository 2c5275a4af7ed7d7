use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::mag_norm;
use crate::nn::{Conv1d, Module, Param};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Shape of one view encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    /// Output channels per residual block; the last is the embedding size.
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    /// Expected input length.
    pub window: usize,
}

impl EncoderConfig {
    pub fn embed_dim(&self) -> usize {
        self.channels.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.embed_dim() < 2 || self.in_channels == 0 {
            return Err(Error::Config(format!(
                "encoder needs >= 1 block, >= 1 input channel and embedding size >= 2: {self:?}"
            )));
        }
        if self.kernel_size % 2 == 0 || self.window == 0 {
            return Err(Error::Config(format!(
                "encoder needs an odd kernel and a positive window: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `conv(k, stride 2) -> ReLU -> conv(k, stride 1)` plus a strided 1x1
/// shortcut. Every block but the last applies a ReLU after the sum; the last
/// keeps the sum linear so the pooled embedding cannot collapse to zero.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub shortcut: Conv1d,
    pub output_relu: bool,
}

impl ResBlock {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        output_relu: bool,
        rng: &mut Rng,
    ) -> Self {
        let pad = kernel / 2;
        Self {
            conv1: Conv1d::new(&format!("{name}.conv1"), cin, cout, kernel, 2, pad, rng),
            conv2: Conv1d::new(&format!("{name}.conv2"), cout, cout, kernel, 1, pad, rng),
            shortcut: Conv1d::new(&format!("{name}.shortcut"), cin, cout, 1, 2, 0, rng),
            output_relu,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv2.forward(&self.conv1.forward(x)?.relu())?;
        let y = h.add(&self.shortcut.forward(x)?)?;
        Ok(if self.output_relu { y.relu() } else { y })
    }
}

impl Module for ResBlock {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.conv1.visit(f);
        self.conv2.visit(f);
        self.shortcut.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.shortcut.visit_mut(f);
    }
}

/// Residual 1-D CNN followed by global average pooling.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub blocks: Vec<ResBlock>,
}

impl Encoder {
    pub fn new(name: &str, config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut cin = config.in_channels;
        let last = config.channels.len() - 1;
        let blocks = config
            .channels
            .iter()
            .enumerate()
            .map(|(b, &cout)| {
                let block = ResBlock::new(
                    &format!("{name}.block{b}"),
                    cin,
                    cout,
                    config.kernel_size,
                    b != last,
                    rng,
                );
                cin = cout;
                block
            })
            .collect();
        Ok(Self { config, blocks })
    }

    /// Pooled features `[B, C]` for inputs `[B, channels, window]`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let expect = [self.config.in_channels, self.config.window];
        if x.rank() != 3 || x.shape()[1..] != expect {
            return Err(Error::ShapeMismatch {
                op: "encoder",
                lhs: x.shape().to_vec(),
                rhs: expect.to_vec(),
            });
        }
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        h.mean_axis(2, false)
    }

    /// Embeddings `[B, C]`, magnitude-normalized unless `magnorm` is off.
    pub fn encode(&self, x: &Tensor, magnorm: bool) -> Result<Tensor> {
        let h = self.features(x)?;
        if magnorm {
            Ok(mag_norm(&h)?.into_tensor())
        } else {
            Ok(h)
        }
    }
}

impl Module for Encoder {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        for b in &self.blocks {
            b.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
    }
}
