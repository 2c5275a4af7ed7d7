use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::shape::{broadcast_shape, broadcast_strides, for_each_broadcast};
use super::Tensor;
use crate::error::{Error, Result};
use crate::math;

/// Floor applied before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-30;

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }
}

fn binary(a: &Tensor, b: &Tensor, op: BinOp) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::ShapeMismatch {
        op: op.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let same = a.shape() == b.shape();
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f64> = if same {
        ad.iter().zip(bd).map(|(&x, &y)| op.apply(x, y)).collect()
    } else {
        let mut data = vec![0.0; super::numel(&out_shape)];
        for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
            data[o] = op.apply(ad[ia], bd[ib]);
        });
        data
    };

    let (pa, pb) = (a.clone(), b.clone());
    let shape_c = out_shape.clone();
    let backward = Box::new(move |g: &[f64], _out: &[f64], needs: &[bool]| {
        let (ad, bd) = (pa.data(), pb.data());
        let mut ga = needs[0].then(|| vec![0.0; pa.numel()]);
        let mut gb = needs[1].then(|| vec![0.0; pb.numel()]);
        let mut visit = |o: usize, ia: usize, ib: usize| {
            let go = g[o];
            let (da, db) = match op {
                BinOp::Add => (go, go),
                BinOp::Sub => (go, -go),
                BinOp::Mul => (go * bd[ib], go * ad[ia]),
                BinOp::Div => (go / bd[ib], -go * ad[ia] / (bd[ib] * bd[ib])),
            };
            if let Some(ga) = ga.as_mut() {
                ga[ia] += da;
            }
            if let Some(gb) = gb.as_mut() {
                gb[ib] += db;
            }
        };
        if same {
            (0..g.len()).for_each(|i| visit(i, i, i));
        } else {
            for_each_broadcast(&shape_c, &sa, &sb, visit);
        }
        vec![ga, gb]
    });
    Ok(Tensor::from_op(out_shape, data, vec![a.clone(), b.clone()], backward))
}

impl Tensor {
    /// Elementwise `self + other` with broadcasting.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Div)
    }

    /// Applies `f` elementwise; `df(x, y)` is the derivative given input `x`
    /// and output `y`.
    fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let input = self.clone();
        let backward = Box::new(move |g: &[f64], out: &[f64], _: &[bool]| {
            let grad = input
                .data()
                .iter()
                .zip(out)
                .zip(g)
                .map(|((&x, &y), &go)| go * df(x, y))
                .collect();
            vec![Some(grad)]
        });
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], backward)
    }

    pub fn neg(&self) -> Tensor {
        self.unary(|x| -x, |_, _| -1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(math::exp, |_, y| y)
    }

    /// Natural log of `max(x, 1e-30)`.
    pub fn ln(&self) -> Tensor {
        self.unary(
            |x| math::ln(x.max(LOG_FLOOR)),
            |x, _| if x > LOG_FLOOR { 1.0 / x } else { 0.0 },
        )
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(math::sqrt, |_, y| if y > 0.0 { 0.5 / y } else { 0.0 })
    }

    pub fn powf(&self, p: f64) -> Tensor {
        self.unary(
            move |x| math::powf(x, p),
            move |x, _| p * math::powf(x, p - 1.0),
        )
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(math::softplus, |x, _| math::sigmoid(x))
    }

    /// Standard normal CDF, elementwise.
    pub fn normal_cdf(&self) -> Tensor {
        self.unary(math::normal_cdf, |x, _| math::normal_pdf(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::param(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn broadcast_add_bias_backward_reduces() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let b = t(&[10.0, 20.0, 30.0], &[3]);
        let y = x.add(&b).unwrap();
        assert_eq!(y.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let g = y.sum().backward().unwrap();
        assert_eq!(g.get(&b).unwrap(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.get(&x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn incompatible_shapes_error() {
        let a = t(&[1.0, 2.0], &[2]);
        let b = t(&[1.0, 2.0, 3.0], &[3]);
        assert!(matches!(a.mul(&b), Err(Error::ShapeMismatch { op: "mul", .. })));
    }

    #[test]
    fn ln_floors_at_tiny_values() {
        let x = Tensor::from_vec(vec![0.0, 1.0], &[2]).unwrap();
        let y = x.ln();
        assert_eq!(y.data()[0], math::ln(LOG_FLOOR));
        assert_eq!(y.data()[1], 0.0);
    }

    #[test]
    fn div_gradients() {
        let a = t(&[3.0], &[1]);
        let b = t(&[2.0], &[1]);
        let g = a.div(&b).unwrap().sum().backward().unwrap();
        assert_eq!(g.get(&a).unwrap(), &[0.5]);
        assert_eq!(g.get(&b).unwrap(), &[-0.75]);
    }
}
