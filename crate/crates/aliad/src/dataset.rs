//! Dataset directories.
//!
//! ```text
//! DIR/manifest.json   layout, sizes and label presence
//! DIR/labels.csv      sample_id,class   (class empty when unlabeled)
//! DIR/mask.csv        sample_id,<view name>...   (1 present, 0 absent)
//! DIR/view_<k>.bin    [sample, channel, time] f32 values, see `binary`
//! ```
//!
//! Values are stored as 32-bit floats, so saving data that is not exactly
//! representable in `f32` rounds it once; after that a save/load cycle is
//! bitwise stable.

use std::fs;
use std::path::Path;

use aliad_core::data::{Dataset, PresenceMask, ViewInfo};
use serde::{Deserialize, Serialize};

use crate::binary::{read_view, write_view};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub num_views: usize,
    pub views: Vec<ViewInfo>,
    pub window: usize,
    pub num_classes: usize,
    pub num_samples: usize,
    /// Whether any sample carries a label.
    pub has_labels: bool,
    pub labeled_samples: usize,
}

impl DatasetManifest {
    pub fn describe(ds: &Dataset) -> Self {
        let labeled = ds.labeled_indices().len();
        Self {
            version: FORMAT_VERSION,
            num_views: ds.num_views(),
            views: ds.views.clone(),
            window: ds.window,
            num_classes: ds.num_classes,
            num_samples: ds.num_samples(),
            has_labels: labeled > 0,
            labeled_samples: labeled,
        }
    }
}

pub fn view_file(k: usize) -> String {
    format!("view_{k}.bin")
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    fs::write(path, text + "\n").map_err(Error::io(path))
}

/// Writes `ds` into `dir`, creating it if needed.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    write_json(&dir.join("manifest.json"), &DatasetManifest::describe(ds))?;

    let path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::csv(&path))?;
    w.write_record(["sample_id", "class"]).map_err(Error::csv(&path))?;
    for (i, label) in ds.labels.iter().enumerate() {
        let class = label.map(|c| c.to_string()).unwrap_or_default();
        w.write_record([i.to_string(), class]).map_err(Error::csv(&path))?;
    }
    w.flush().map_err(Error::io(&path))?;

    let path = dir.join("mask.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::csv(&path))?;
    let header = std::iter::once("sample_id").chain(ds.views.iter().map(|v| v.name.as_str()));
    w.write_record(header).map_err(Error::csv(&path))?;
    for i in 0..ds.num_samples() {
        let row = std::iter::once(i.to_string()).chain(
            ds.mask
                .row(i)
                .iter()
                .map(|&b| if b { "1" } else { "0" }.to_string()),
        );
        w.write_record(row).map_err(Error::csv(&path))?;
    }
    w.flush().map_err(Error::io(&path))?;

    for (k, info) in ds.views.iter().enumerate() {
        let shape = [ds.num_samples(), info.channels, ds.window];
        write_view(&dir.join(view_file(k)), shape, &ds.data[k])?;
    }
    Ok(())
}

fn check_sample_id(path: &Path, field: Option<&str>, expect: usize) -> Result<()> {
    match field.map(str::trim).map(str::parse::<usize>) {
        Some(Ok(id)) if id == expect => Ok(()),
        _ => Err(Error::format(
            path,
            format!("row {expect}: sample_id must be {expect}, got {field:?}"),
        )),
    }
}

fn read_labels(path: &Path, manifest: &DatasetManifest) -> Result<Vec<Option<usize>>> {
    let mut r = csv::Reader::from_path(path).map_err(Error::csv(path))?;
    let headers = r.headers().map_err(Error::csv(path))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["sample_id", "class"] {
        return Err(Error::format(path, format!("expected columns sample_id,class, got {headers:?}")));
    }
    let mut labels = Vec::with_capacity(manifest.num_samples);
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(Error::csv(path))?;
        check_sample_id(path, rec.get(0), i)?;
        let class = rec.get(1).unwrap_or("").trim();
        labels.push(if class.is_empty() {
            None
        } else {
            let c: usize = class
                .parse()
                .map_err(|_| Error::format(path, format!("row {i}: bad class `{class}`")))?;
            Some(c)
        });
    }
    Ok(labels)
}

fn read_mask(path: &Path, manifest: &DatasetManifest) -> Result<PresenceMask> {
    let mut r = csv::Reader::from_path(path).map_err(Error::csv(path))?;
    let headers = r.headers().map_err(Error::csv(path))?.clone();
    let expect: Vec<&str> = std::iter::once("sample_id")
        .chain(manifest.views.iter().map(|v| v.name.as_str()))
        .collect();
    if headers.iter().collect::<Vec<_>>() != expect {
        return Err(Error::format(
            path,
            format!("expected columns {}, got {headers:?}", expect.join(",")),
        ));
    }
    let v = manifest.num_views;
    let mut bits = Vec::with_capacity(manifest.num_samples * v);
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(Error::csv(path))?;
        check_sample_id(path, rec.get(0), i)?;
        for field in rec.iter().skip(1) {
            bits.push(match field.trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => {
                    return Err(Error::format(path, format!("row {i}: bad presence flag `{other}`")))
                }
            });
        }
        rows += 1;
    }
    Ok(PresenceMask::new(rows, v, bits)?)
}

/// Reads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join("manifest.json");
    let manifest: DatasetManifest = read_json(&mpath)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::format(
            &mpath,
            format!("unsupported version {}, expected {FORMAT_VERSION}", manifest.version),
        ));
    }
    if manifest.num_views != manifest.views.len() {
        return Err(Error::format(
            &mpath,
            format!("num_views {} but {} view entries", manifest.num_views, manifest.views.len()),
        ));
    }

    let lpath = dir.join("labels.csv");
    let labels = read_labels(&lpath, &manifest)?;
    let mask = read_mask(&dir.join("mask.csv"), &manifest)?;
    let n = manifest.num_samples;
    if labels.len() != n || mask.num_samples() != n {
        return Err(Error::format(
            dir,
            format!(
                "manifest lists {n} samples, labels.csv has {}, mask.csv has {}",
                labels.len(),
                mask.num_samples()
            ),
        ));
    }
    let labeled = labels.iter().filter(|l| l.is_some()).count();
    if labeled != manifest.labeled_samples || (labeled > 0) != manifest.has_labels {
        return Err(Error::format(
            &lpath,
            format!("{labeled} labeled rows, manifest says {}", manifest.labeled_samples),
        ));
    }

    let mut data = Vec::with_capacity(manifest.num_views);
    for (k, info) in manifest.views.iter().enumerate() {
        let path = dir.join(view_file(k));
        let (shape, values) = read_view(&path)?;
        let expect = [n, info.channels, manifest.window];
        if shape != expect {
            return Err(Error::format(&path, format!("shape {shape:?}, expected {expect:?}")));
        }
        data.push(values);
    }
    Ok(Dataset::new(
        manifest.views,
        manifest.window,
        manifest.num_classes,
        data,
        labels,
        mask,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use aliad_core::data::{gen_synthetic, SyntheticSpec};

    #[test]
    fn manifest_describes_label_presence() {
        let mut spec = SyntheticSpec::inertial(2, 3, 5.0, 0);
        spec.samples_per_class = 5;
        spec.unlabeled_fraction = 0.2;
        let ds = gen_synthetic(&spec).unwrap();
        let m = DatasetManifest::describe(&ds);
        assert_eq!(m.num_samples, 15);
        assert_eq!(m.labeled_samples, ds.labeled_indices().len());
        assert!(m.has_labels && m.labeled_samples < 15);
        assert!(!DatasetManifest::describe(&ds.without_labels()).has_labels);
    }
}
