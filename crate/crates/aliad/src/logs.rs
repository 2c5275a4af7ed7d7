//! Training-log CSV files and the view-weight analysis built on them.

use std::path::Path;

use aliad_core::eval::WeightCurve;
use aliad_core::model::EpochRecord;

use crate::error::{Error, Result};

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

/// `epoch,l_cls,l_ac,l_lb,val_f1,w_mean_view_0..` — `l_ac` is empty when
/// the run had no contrastive term, `val_f1` when it had no validation set.
pub fn write_train_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let views = records.first().map_or(0, |r| r.w_mean.len());
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    let mut header: Vec<String> = ["epoch", "l_cls", "l_ac", "l_lb", "val_f1"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..views).map(|v| format!("w_mean_view_{v}")));
    w.write_record(&header).map_err(Error::csv(path))?;
    for r in records {
        let mut row = vec![r.epoch.to_string(), fmt(r.l_cls), opt(r.l_ac), fmt(r.l_lb), opt(r.val_f1)];
        row.extend(r.w_mean.iter().copied().map(fmt));
        w.write_record(&row).map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}

/// `epoch,class,w_mean_view_0..`: mean attention weights per labeled class.
pub fn write_class_weights(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let views = records.first().map_or(0, |r| r.w_mean.len());
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    let mut header = vec!["epoch".to_string(), "class".to_string()];
    header.extend((0..views).map(|v| format!("w_mean_view_{v}")));
    w.write_record(&header).map_err(Error::csv(path))?;
    for r in records {
        for (class, weights) in &r.class_w_mean {
            let mut row = vec![r.epoch.to_string(), class.to_string()];
            row.extend(weights.iter().copied().map(fmt));
            w.write_record(&row).map_err(Error::csv(path))?;
        }
    }
    w.flush().map_err(Error::io(path))
}

/// Reads the weight and contrastive-loss curves from a training log.
/// Requires `epoch` and `w_mean_view_0`, `w_mean_view_1`, ...; an `l_ac`
/// column is optional and read as absent when every value is empty.
pub fn read_weight_curve(path: &Path) -> Result<WeightCurve> {
    let mut r = csv::Reader::from_path(path).map_err(Error::csv(path))?;
    let headers = r.headers().map_err(Error::csv(path))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let epoch_col = col("epoch").ok_or_else(|| Error::format(path, "missing column `epoch`"))?;
    let weight_cols: Vec<usize> = (0..)
        .map_while(|v| col(&format!("w_mean_view_{v}")))
        .collect();
    if weight_cols.is_empty() {
        return Err(Error::format(path, "missing column `w_mean_view_0`"));
    }
    let ac_col = col("l_ac");

    let parse = |field: &str, row: usize, name: &str| -> Result<f64> {
        field
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("row {row}: bad {name} `{field}`")))
    };
    let mut curve = WeightCurve {
        epochs: Vec::new(),
        weights: Vec::new(),
        l_ac: None,
    };
    let mut ac: Vec<Option<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(Error::csv(path))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let epoch = field(epoch_col)
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("row {i}: bad epoch `{}`", field(epoch_col))))?;
        curve.epochs.push(epoch);
        curve.weights.push(
            weight_cols
                .iter()
                .map(|&c| parse(field(c), i, "weight"))
                .collect::<Result<_>>()?,
        );
        if let Some(c) = ac_col {
            let f = field(c);
            ac.push(if f.trim().is_empty() { None } else { Some(parse(f, i, "l_ac")?) });
        }
    }
    if ac.iter().any(Option::is_some) {
        if ac.iter().any(Option::is_none) {
            return Err(Error::format(path, "l_ac is empty on some rows only"));
        }
        curve.l_ac = Some(ac.into_iter().flatten().collect());
    }
    Ok(curve)
}

/// `epoch,w_mean_view_0..,w_std[,l_ac]` with one row per epoch.
pub fn write_weight_curve(path: &Path, curve: &WeightCurve) -> Result<()> {
    let views = curve.weights.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    let mut header = vec!["epoch".to_string()];
    header.extend((0..views).map(|v| format!("w_mean_view_{v}")));
    header.push("w_std".into());
    if curve.l_ac.is_some() {
        header.push("l_ac".into());
    }
    w.write_record(&header).map_err(Error::csv(path))?;
    let spread = curve.spread();
    for (i, epoch) in curve.epochs.iter().enumerate() {
        let mut row = vec![epoch.to_string()];
        row.extend(curve.weights[i].iter().copied().map(fmt));
        row.push(fmt(spread[i]));
        if let Some(ac) = &curve.l_ac {
            row.push(fmt(ac[i]));
        }
        w.write_record(&row).map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn record(epoch: usize, l_ac: Option<f64>) -> EpochRecord {
        EpochRecord {
            epoch,
            l_cls: 1.0 / epoch as f64,
            l_ac,
            l_lb: 0.5,
            total: 2.0,
            val_f1: None,
            w_mean: vec![0.25, 0.75],
            class_w_mean: BTreeMap::from([(0, vec![0.5, 0.5]), (2, vec![0.1, 0.9])]),
        }
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let records = vec![record(1, Some(3.0)), record(2, Some(2.5))];
        write_train_log(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,l_cls,l_ac,l_lb,val_f1,w_mean_view_0,w_mean_view_1\n"));
        let curve = read_weight_curve(&path).unwrap();
        assert_eq!(curve.epochs, vec![1, 2]);
        assert_eq!(curve.weights[1], vec![0.25, 0.75]);
        assert_eq!(curve.l_ac, Some(vec![3.0, 2.5]));

        let out = dir.path().join("w.csv");
        write_weight_curve(&out, &curve).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().next().unwrap(), "epoch,w_mean_view_0,w_mean_view_1,w_std,l_ac");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn no_contrast_logs_have_no_l_ac() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_train_log(&path, &[record(1, None), record(2, None)]).unwrap();
        let curve = read_weight_curve(&path).unwrap();
        assert!(curve.l_ac.is_none());
        let out = dir.path().join("w.csv");
        write_weight_curve(&out, &curve).unwrap();
        assert!(!std::fs::read_to_string(&out).unwrap().contains("l_ac"));
    }

    #[test]
    fn missing_columns_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        std::fs::write(&path, "epoch,l_cls\n1,0.5\n").unwrap();
        let err = read_weight_curve(&path).unwrap_err().to_string();
        assert!(err.contains("w_mean_view_0"), "{err}");
        std::fs::write(&path, "l_cls,w_mean_view_0\n0.5,1\n").unwrap();
        assert!(read_weight_curve(&path).unwrap_err().to_string().contains("epoch"));
    }

    #[test]
    fn class_weights_have_one_row_per_class_and_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cw.csv");
        write_class_weights(&path, &[record(1, None), record(2, None)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("2,2,0.1,0.9"));
    }
}
