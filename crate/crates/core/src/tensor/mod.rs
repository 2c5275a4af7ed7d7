//! Dense `f64` tensors with a dynamically recorded reverse-mode graph.
//!
//! Every operation produces a new immutable [`Tensor`]. When at least one
//! input requires a gradient, the result keeps its parents and a closure that
//! maps the output gradient onto the parents. [`Tensor::backward`] walks the
//! recorded nodes in reverse creation order, which is a valid topological
//! order because parents always exist before their children. Accumulation
//! order is therefore fixed by recording order and gradients are bitwise
//! reproducible.
//!
//! ```
//! use aliad_core::Tensor;
//!
//! let t = Tensor::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
//! let loss = t.mul(&t).unwrap().sum();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(&t).unwrap(), &[2.0, 4.0, 6.0]);
//! ```

mod elementwise;
mod index;
mod linalg;
mod reduce;
mod shape;

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU64, AtomicU8, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use shape::numel;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);
static PRECISION: AtomicU8 = AtomicU8::new(0);

/// Working precision of op outputs.
///
/// Storage is always `f64`. Under [`Precision::F32`] every op result and every
/// parameter update is rounded to the nearest `f32`, so a run reproduces
/// single-precision arithmetic at the value level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Sets the process-wide precision. Returns the previous setting.
pub fn set_precision(p: Precision) -> Precision {
    let prev = PRECISION.swap(p as u8, Ordering::SeqCst);
    if prev == Precision::F32 as u8 {
        Precision::F32
    } else {
        Precision::F64
    }
}

pub fn precision() -> Precision {
    if PRECISION.load(Ordering::Relaxed) == Precision::F32 as u8 {
        Precision::F32
    } else {
        Precision::F64
    }
}

pub(crate) fn apply_precision(mut data: Vec<f64>) -> Vec<f64> {
    if precision() == Precision::F32 {
        for v in &mut data {
            *v = *v as f32 as f64;
        }
    }
    data
}

/// Maps `(grad_out, out_values, needs_grad_per_parent)` to one optional
/// gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data)
            .finish()
    }
}

impl Tensor {
    fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        let expected = numel(shape);
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                lhs: vec![data.len()],
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        })))
    }

    /// Constant tensor (no gradient).
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Trainable leaf.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    pub fn scalar(v: f64) -> Self {
        Self::leaf(vec![v], &[], false).expect("scalar shape")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(vec![0.0; numel(shape)], shape, false).expect("zeros shape")
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::leaf(vec![v; numel(shape)], shape, false).expect("full shape")
    }

    /// Records an op result. Parents and the backward closure are kept only
    /// when some parent needs a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let data = apply_precision(data);
        let (parents, backward) = if requires_grad {
            (parents, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            parents,
            backward,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.0.data[0]
    }

    pub(crate) fn id(&self) -> u64 {
        self.0.id
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Same values, but the backward pass treats the result as a constant.
    pub fn stop_gradient(&self) -> Tensor {
        Self::leaf(self.0.data.clone(), &self.0.shape, false).expect("shape preserved")
    }

    /// Same values as a fresh trainable leaf, detached from any graph.
    pub fn detach_param(&self) -> Tensor {
        Self::leaf(self.0.data.clone(), &self.0.shape, true).expect("shape preserved")
    }

    /// Reverse-mode gradients of a scalar with respect to every leaf that
    /// requires a gradient.
    pub fn backward(&self) -> Result<Gradients> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        let mut leaves = BTreeMap::new();
        if !self.requires_grad() {
            return Ok(Gradients { leaves });
        }

        let mut nodes: BTreeMap<u64, Tensor> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            for p in &t.0.parents {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push(p.clone());
                }
            }
            nodes.insert(t.id(), t);
        }

        let mut pending: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        pending.insert(self.id(), vec![1.0]);
        for (id, node) in nodes.iter().rev() {
            let Some(grad) = pending.remove(id) else {
                continue;
            };
            match &node.0.backward {
                Some(backward) => {
                    let needs: Vec<bool> =
                        node.0.parents.iter().map(Tensor::requires_grad).collect();
                    let parent_grads = backward(&grad, &node.0.data, &needs);
                    for ((parent, need), pg) in
                        node.0.parents.iter().zip(&needs).zip(parent_grads)
                    {
                        let (true, Some(pg)) = (*need, pg) else {
                            continue;
                        };
                        debug_assert_eq!(pg.len(), parent.numel());
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += g),
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
                    }
                }
                None => {
                    leaves.insert(*id, grad);
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

/// Gradients of a scalar keyed by leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    leaves: BTreeMap<u64, Vec<f64>>,
}

impl Gradients {
    /// Gradient for `t`, or `None` if no path from the loss reaches it.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.leaves.get(&t.id()).map(Vec::as_slice)
    }

    pub fn get_or_zeros(&self, t: &Tensor) -> Vec<f64> {
        self.get(t)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.numel()])
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}
