//! Multiview classification under arbitrary missing views.
//!
//! The crate is `no_std` (with `alloc`) and carries everything that is pure
//! computation: a small reverse-mode autodiff substrate ([`tensor`]), the
//! hyperspherical geometry helpers, the pairwise / adjusted-center /
//! full-graph contrastive losses, attention fusion, the sparse
//! mixture-of-experts head, the full model with its training loop, the
//! synthetic data generator and the evaluation metrics.
//!
//! File formats, timing and the command line live in the `aliad` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod contrastive;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod gradcheck;
mod math;
pub mod model;
pub mod moe;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Gradients, Precision, Tensor};
