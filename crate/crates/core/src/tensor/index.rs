use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::shape::{check_axis, numel, split_axis};
use super::Tensor;
use crate::error::{Error, Result};

impl Tensor {
    /// Same values under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let backward =
            Box::new(|g: &[f64], _: &[f64], _: &[bool]| vec![Some(g.to_vec())]);
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            backward,
        ))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::EmptyBatch("concat of zero tensors"))?;
        check_axis(axis, first.rank())?;
        for p in parts {
            let compatible = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                out.extend_from_slice(&p.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let lens_c = lens.clone();
        let backward = Box::new(move |g: &[f64], _: &[f64], needs: &[bool]| {
            let mut grads: Vec<Option<Vec<f64>>> = needs
                .iter()
                .zip(&lens_c)
                .map(|(&n, &l)| n.then(|| Vec::with_capacity(outer * l * inner)))
                .collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (gp, &l) in grads.iter_mut().zip(&lens_c) {
                    if let Some(gp) = gp.as_mut() {
                        gp.extend_from_slice(&g[offset..offset + l * inner]);
                    }
                    offset += l * inner;
                }
            }
            grads
        });
        Ok(Tensor::from_op(shape, out, parts.to_vec(), backward))
    }

    /// Gathers slices `indices` along `axis` (repeats allowed).
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        check_axis(axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(Error::IndexOutOfBounds { index: bad, size: len });
        }
        let x = self.data();
        let m = indices.len();
        let mut out = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            for &i in indices {
                out.extend_from_slice(&x[(o * len + i) * inner..(o * len + i + 1) * inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = m;
        let idx = indices.to_vec();
        let backward = Box::new(move |g: &[f64], _: &[f64], _: &[bool]| {
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for (s, &i) in idx.iter().enumerate() {
                    let src = &g[(o * m + s) * inner..(o * m + s + 1) * inner];
                    gx[(o * len + i) * inner..(o * len + i + 1) * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, v)| *d += v);
                }
            }
            vec![Some(gx)]
        });
        Ok(Tensor::from_op(shape, out, vec![self.clone()], backward))
    }

    /// Keeps the slices along `axis` whose mask entry is true.
    pub fn masked_select(&self, axis: usize, mask: &[bool]) -> Result<Tensor> {
        check_axis(axis, self.rank())?;
        if mask.len() != self.shape()[axis] {
            return Err(Error::ShapeMismatch {
                op: "masked_select",
                lhs: self.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let idx: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        self.index_select(axis, &idx)
    }

    /// Inverse of [`Tensor::index_select`]: places slice `s` of `self` at
    /// position `indices[s]` of a zero tensor with `size` slices along
    /// `axis`. Repeated indices accumulate.
    pub fn scatter(&self, axis: usize, indices: &[usize], size: usize) -> Result<Tensor> {
        check_axis(axis, self.rank())?;
        let (outer, m, inner) = split_axis(self.shape(), axis);
        if m != indices.len() {
            return Err(Error::ShapeMismatch {
                op: "scatter",
                lhs: self.shape().to_vec(),
                rhs: vec![indices.len()],
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= size) {
            return Err(Error::IndexOutOfBounds { index: bad, size });
        }
        let x = self.data();
        let mut out = vec![0.0; outer * size * inner];
        for o in 0..outer {
            for (s, &i) in indices.iter().enumerate() {
                let src = &x[(o * m + s) * inner..(o * m + s + 1) * inner];
                out[(o * size + i) * inner..(o * size + i + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, v)| *d += v);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = size;
        let idx = indices.to_vec();
        let backward = Box::new(move |g: &[f64], _: &[f64], _: &[bool]| {
            let mut gx = Vec::with_capacity(outer * m * inner);
            for o in 0..outer {
                for &i in &idx {
                    gx.extend_from_slice(&g[(o * size + i) * inner..(o * size + i + 1) * inner]);
                }
            }
            vec![Some(gx)]
        });
        Ok(Tensor::from_op(shape, out, vec![self.clone()], backward))
    }
}
