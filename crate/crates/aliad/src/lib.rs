//! Files, timing and the command line around `aliad-core`.
//!
//! - [`dataset`]: the on-disk dataset directory (JSON manifest, CSV labels
//!   and presence mask, one binary file per view).
//! - [`checkpoint`]: run directories holding a trained model.
//! - [`logs`]: training-log CSVs and the view-weight analysis.
//! - [`bench`]: loss timing with median / IQR reporting.
//! - [`cli`]: the `aliad` subcommands.

pub mod bench;
pub mod binary;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
mod error;
pub mod logs;

pub use error::{Error, Result};
