use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::shape::{check_axis, split_axis};
use super::Tensor;
use crate::error::{Error, Result};
use crate::math;

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim {
        s[axis] = 1;
    } else {
        s.remove(axis);
    }
    s
}

impl Tensor {
    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.numel();
        let backward = Box::new(move |g: &[f64], _: &[f64], _: &[bool]| vec![Some(vec![g[0]; n])]);
        Tensor::from_op(Vec::new(), vec![total], vec![self.clone()], backward)
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        check_axis(axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                let src = &x[(o * len + i) * inner..(o * len + i + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        let backward = Box::new(move |g: &[f64], _: &[f64], _: &[bool]| {
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for i in 0..len {
                    gx[(o * len + i) * inner..(o * len + i + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        });
        Ok(Tensor::from_op(
            reduced_shape(self.shape(), axis, keepdim),
            out,
            vec![self.clone()],
            backward,
        ))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        check_axis(axis, self.rank())?;
        let len = self.shape()[axis].max(1) as f64;
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / len))
    }

    /// Euclidean norm along `axis`.
    pub fn l2_norm(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        check_axis(axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                for r in 0..inner {
                    let v = x[(o * len + i) * inner + r];
                    out[o * inner + r] += v * v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = math::sqrt(*v));
        let input = self.clone();
        let backward = Box::new(move |g: &[f64], norms: &[f64], _: &[bool]| {
            let x = input.data();
            let mut gx = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..len {
                    for r in 0..inner {
                        let n = norms[o * inner + r];
                        if n > 0.0 {
                            let k = (o * len + i) * inner + r;
                            gx[k] = g[o * inner + r] * x[k] / n;
                        }
                    }
                }
            }
            vec![Some(gx)]
        });
        Ok(Tensor::from_op(
            reduced_shape(self.shape(), axis, keepdim),
            out,
            vec![self.clone()],
            backward,
        ))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis(axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for r in 0..inner {
                let at = |i: usize| (o * len + i) * inner + r;
                let m = (0..len).map(|i| x[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in 0..len {
                    let e = math::exp(x[at(i)] - m);
                    out[at(i)] = e;
                    z += e;
                }
                for i in 0..len {
                    out[at(i)] /= z;
                }
            }
        }
        let backward = Box::new(move |g: &[f64], s: &[f64], _: &[bool]| {
            let mut gx = vec![0.0; s.len()];
            for o in 0..outer {
                for r in 0..inner {
                    let at = |i: usize| (o * len + i) * inner + r;
                    let dot: f64 = (0..len).map(|i| g[at(i)] * s[at(i)]).sum();
                    for i in 0..len {
                        gx[at(i)] = s[at(i)] * (g[at(i)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        });
        Ok(Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], backward))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis(axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for r in 0..inner {
                let at = |i: usize| (o * len + i) * inner + r;
                let m = (0..len).map(|i| x[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + math::ln((0..len).map(|i| math::exp(x[at(i)] - m)).sum::<f64>());
                for i in 0..len {
                    out[at(i)] = x[at(i)] - lse;
                }
            }
        }
        let backward = Box::new(move |g: &[f64], y: &[f64], _: &[bool]| {
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for r in 0..inner {
                    let at = |i: usize| (o * len + i) * inner + r;
                    let gsum: f64 = (0..len).map(|i| g[at(i)]).sum();
                    for i in 0..len {
                        gx[at(i)] = g[at(i)] - math::exp(y[at(i)]) * gsum;
                    }
                }
            }
            vec![Some(gx)]
        });
        Ok(Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], backward))
    }

    /// Per-row cross-entropy of `[B, M]` logits against class indices,
    /// returned as a `[B]` tensor.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 || self.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: self.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (b, m) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= m) {
            return Err(Error::IndexOutOfBounds { index: bad, size: m });
        }
        let x = self.data();
        let mut probs = vec![0.0; b * m];
        let mut out = vec![0.0; b];
        for i in 0..b {
            let row = &x[i * m..(i + 1) * m];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&v| math::exp(v - mx)).sum();
            for j in 0..m {
                probs[i * m + j] = math::exp(row[j] - mx) / z;
            }
            out[i] = mx + math::ln(z) - row[labels[i]];
        }
        let labels = labels.to_vec();
        let backward = Box::new(move |g: &[f64], _: &[f64], _: &[bool]| {
            let mut gx = probs.clone();
            for i in 0..b {
                gx[i * m + labels[i]] -= 1.0;
                gx[i * m..(i + 1) * m].iter_mut().for_each(|v| *v *= g[i]);
            }
            vec![Some(gx)]
        });
        Ok(Tensor::from_op(vec![b], out, vec![self.clone()], backward))
    }
}
