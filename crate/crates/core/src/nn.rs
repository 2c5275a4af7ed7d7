//! Trainable layers and the Adam optimizer.
//!
//! A [`Param`] owns a trainable leaf tensor. Because tensors are immutable,
//! an optimizer step replaces the leaf with a fresh one carrying the updated
//! values; gradients are looked up by the leaf that was used in the forward
//! pass, so a step must happen after `backward` and before the next forward.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand::distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;
use crate::tensor::{apply_precision, Gradients, Tensor};

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, values: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            value: Tensor::param(values, shape)?,
        })
    }

    /// Uniform initialization in `[-bound, bound]`.
    pub fn uniform(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut Rng) -> Self {
        let n = crate::tensor::numel(shape);
        let values = if bound > 0.0 {
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            (0..n).map(|_| dist.sample(rng)).collect()
        } else {
            vec![0.0; n]
        };
        Self::new(name, values, shape).expect("numel matches shape")
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    /// Replaces the values, keeping name and shape.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.value.numel() {
            return Err(Error::ShapeMismatch {
                op: "set_values",
                lhs: self.value.shape().to_vec(),
                rhs: vec![values.len()],
            });
        }
        let shape = self.value.shape().to_vec();
        self.value = Tensor::param(apply_precision(values), &shape)?;
        Ok(())
    }
}

/// Anything that owns parameters.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.value.numel());
        n
    }

    /// Copies of all parameter values keyed by name.
    fn state(&self) -> BTreeMap<String, (Vec<usize>, Vec<f64>)> {
        let mut out = BTreeMap::new();
        self.visit(&mut |p| {
            out.insert(p.name.clone(), (p.shape().to_vec(), p.value.to_vec()));
        });
        out
    }

    /// Restores values from [`Module::state`]. Every parameter must be present
    /// with a matching shape.
    fn load_state(&mut self, state: &BTreeMap<String, (Vec<usize>, Vec<f64>)>) -> Result<()> {
        let mut err = None;
        self.visit_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            match state.get(&p.name) {
                Some((shape, values)) if shape.as_slice() == p.shape() => {
                    if let Err(e) = p.set_values(values.clone()) {
                        err = Some(e);
                    }
                }
                Some((shape, _)) => {
                    err = Some(Error::ShapeMismatch {
                        op: "load_state",
                        lhs: p.shape().to_vec(),
                        rhs: shape.clone(),
                    })
                }
                None => err = Some(Error::Config(format!("missing parameter `{}`", p.name))),
            }
        });
        err.map_or(Ok(()), Err)
    }
}

/// Fully connected layer `x W + b` on `[B, in]` inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / math::sqrt(input.max(1) as f64);
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[input, output], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), &[output], bound, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight.value)?.add(&self.bias.value)
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl Module for Linear {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Two fully connected layers with a ReLU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(name: &str, input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            hidden: Linear::new(&format!("{name}.fc1"), input, hidden, rng),
            out: Linear::new(&format!("{name}.fc2"), hidden, output, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.out.forward(&self.hidden.forward(x)?.relu())
    }
}

impl Module for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.hidden.visit(f);
        self.out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.hidden.visit_mut(f);
        self.out.visit_mut(f);
    }
}

/// 1-D convolution layer on `[B, Cin, L]` inputs.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        // He-uniform for the ReLU stacks this is used in
        let fan_in = (cin * kernel).max(1) as f64;
        let bound = math::sqrt(6.0 / fan_in);
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[cout, cin, kernel], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), &[cout], 0.0, rng),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv1d(
            &self.weight.value,
            Some(&self.bias.value),
            self.stride,
            self.padding,
        )
    }
}

impl Module for Conv1d {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

/// Adam with bias correction. State is keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: BTreeMap::new(),
        }
    }

    /// Updates every parameter of `module` that received a gradient.
    /// Parameters without a gradient keep their values and moment state.
    pub fn step(&mut self, module: &mut dyn Module, grads: &Gradients) -> Result<()> {
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let state = &mut self.state;
        let mut err = None;
        module.visit_mut(&mut |p| {
            let Some(g) = grads.get(&p.value) else {
                return;
            };
            let n = g.len();
            let s = state.entry(p.name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            });
            s.t += 1;
            let c1 = 1.0 - math::powf(b1, s.t as f64);
            let c2 = 1.0 - math::powf(b2, s.t as f64);
            let mut values = p.value.to_vec();
            for i in 0..n {
                s.m[i] = b1 * s.m[i] + (1.0 - b1) * g[i];
                s.v[i] = b2 * s.v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = s.m[i] / c1;
                let vhat = s.v[i] / c2;
                values[i] -= lr * mhat / (math::sqrt(vhat) + eps);
            }
            if let Err(e) = p.set_values(values) {
                err = Some(e);
            }
        });
        err.map_or(Ok(()), Err)
    }
}

/// Draws a standard-normal sample with the Box–Muller transform.
pub(crate) fn standard_normal(rng: &mut Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * core::f64::consts::PI * u2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut rng = seeded(3);
        let mut lin = Linear::new("l", 2, 1, &mut rng);
        let mut opt = Adam::new(0.05);
        let x = Tensor::from_vec(vec![1.0, 2.0, -1.0, 0.5], &[2, 2]).unwrap();
        let target = Tensor::from_vec(vec![3.0, -1.0], &[2, 1]).unwrap();
        let loss = |l: &Linear| l.forward(&x).unwrap().sub(&target).unwrap().square().mean();
        let start = loss(&lin).item();
        for _ in 0..300 {
            let g = loss(&lin).backward().unwrap();
            opt.step(&mut lin, &g).unwrap();
        }
        assert!(loss(&lin).item() < 1e-3 * start.max(1.0));
    }

    #[test]
    fn state_round_trip() {
        let mut rng = seeded(1);
        let a = Mlp::new("m", 3, 4, 2, &mut rng);
        let mut b = Mlp::new("m", 3, 4, 2, &mut rng);
        assert_ne!(a.hidden.weight.value.data(), b.hidden.weight.value.data());
        b.load_state(&a.state()).unwrap();
        assert_eq!(a.state(), b.state());
        assert_eq!(a.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn load_state_rejects_missing_names() {
        let mut rng = seeded(1);
        let a = Linear::new("a", 2, 2, &mut rng);
        let mut b = Linear::new("b", 2, 2, &mut rng);
        assert!(b.load_state(&a.state()).is_err());
    }

    #[test]
    fn standard_normal_moments() {
        let mut rng = seeded(11);
        let xs: Vec<f64> = (0..20_000).map(|_| standard_normal(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03);
        assert!((var - 1.0).abs() < 0.05);
    }
}
