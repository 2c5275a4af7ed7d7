//! Run directories: a JSON manifest plus one binary file per parameter.
//!
//! ```text
//! RUNDIR/manifest.json
//! RUNDIR/params/<parameter name>.bin
//! RUNDIR/train_log.csv
//! RUNDIR/class_weights.csv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use aliad_core::data::ViewInfo;
use aliad_core::model::{AliAd, AliAdConfig};
use aliad_core::nn::Module;
use serde::{Deserialize, Serialize};

use crate::binary::{read_param, write_param};
use crate::dataset::{read_json, write_json};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Path relative to the run directory.
    pub file: String,
}

/// Contents of `RUNDIR/manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub config: AliAdConfig,
    pub views: Vec<ViewInfo>,
    pub num_classes: usize,
    pub window: usize,
    /// Epoch whose parameters are stored (1-based).
    pub epoch: usize,
    pub val_f1: Option<f64>,
    pub params: Vec<ParamEntry>,
}

/// Stores `model` under `dir`.
pub fn save_checkpoint(model: &AliAd, dir: &Path, epoch: usize, val_f1: Option<f64>) -> Result<()> {
    let pdir = dir.join("params");
    fs::create_dir_all(&pdir).map_err(Error::io(&pdir))?;
    let mut params = Vec::new();
    for (name, (shape, values)) in model.state() {
        let file = format!("params/{name}.bin");
        write_param(&dir.join(&file), &name, &shape, &values)?;
        params.push(ParamEntry { name, shape, file });
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        views: model.views.clone(),
        num_classes: model.num_classes,
        window: model.window,
        epoch,
        val_f1,
        params,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Rebuilds the model stored under `dir`.
pub fn load_checkpoint(dir: &Path) -> Result<(AliAd, CheckpointManifest)> {
    let mpath = dir.join("manifest.json");
    let manifest: CheckpointManifest = read_json(&mpath)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            &mpath,
            format!("unsupported version {}", manifest.version),
        ));
    }
    let mut model = AliAd::new(
        manifest.views.clone(),
        manifest.num_classes,
        manifest.window,
        manifest.config.clone(),
    )?;
    let mut state = BTreeMap::new();
    for entry in &manifest.params {
        let path = dir.join(&entry.file);
        let (name, shape, values) = read_param(&path)?;
        if name != entry.name || shape != entry.shape {
            return Err(Error::format(
                &path,
                format!(
                    "holds {name} {shape:?}, manifest expects {} {:?}",
                    entry.name, entry.shape
                ),
            ));
        }
        state.insert(name, (shape, values));
    }
    let expected = model.state().len();
    if state.len() != expected {
        return Err(Error::format(
            &mpath,
            format!("{} parameters listed, model has {expected}", state.len()),
        ));
    }
    model.load_state(&state)?;
    Ok((model, manifest))
}
