use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Windows of a flat `[channels, length]` buffer: `floor((length - window) /
/// stride) + 1` windows, each flattened as `[channels, window]`.
pub fn sliding_window_raw(
    series: &[f64],
    channels: usize,
    window: usize,
    stride: usize,
) -> Result<Vec<Vec<f64>>> {
    if channels == 0 || series.len() % channels != 0 {
        return Err(Error::Data(alloc::format!(
            "series of {} values is not divisible into {channels} channels",
            series.len()
        )));
    }
    let length = series.len() / channels;
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    if window > length {
        return Err(Error::Data(alloc::format!(
            "window {window} longer than series of length {length}"
        )));
    }
    let count = (length - window) / stride + 1;
    Ok((0..count)
        .map(|w| {
            let start = w * stride;
            let mut out = Vec::with_capacity(channels * window);
            for c in 0..channels {
                out.extend_from_slice(&series[c * length + start..c * length + start + window]);
            }
            out
        })
        .collect())
}

/// Splits a `[channels, length]` series into `[channels, window]` windows
/// starting every `stride` steps.
pub fn sliding_window(series: &Tensor, window: usize, stride: usize) -> Result<Vec<Tensor>> {
    if series.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "sliding_window",
            lhs: series.shape().to_vec(),
            rhs: alloc::vec![0, 0],
        });
    }
    let channels = series.shape()[0];
    sliding_window_raw(series.data(), channels, window, stride)?
        .into_iter()
        .map(|w| Tensor::from_vec(w, &[channels, window]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(channels: usize, length: usize) -> Tensor {
        let v = (0..channels * length).map(|i| i as f64).collect();
        Tensor::from_vec(v, &[channels, length]).unwrap()
    }

    #[test]
    fn overlapping_windows() {
        let s = ramp(1, 10);
        let w = sliding_window(&s, 4, 2).unwrap();
        assert_eq!(w.len(), 4);
        let starts: Vec<f64> = w.iter().map(|t| t.data()[0]).collect();
        assert_eq!(starts, [0.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_overlapping_partition_reconstructs_truncated_series() {
        let s = ramp(2, 11);
        let w = sliding_window(&s, 3, 3).unwrap();
        assert_eq!(w.len(), 3);
        for c in 0..2 {
            let rebuilt: Vec<f64> = w
                .iter()
                .flat_map(|t| t.data()[c * 3..(c + 1) * 3].to_vec())
                .collect();
            assert_eq!(rebuilt, s.data()[c * 11..c * 11 + 9]);
        }
    }

    #[test]
    fn full_length_window_is_identity() {
        let s = ramp(3, 5);
        let w = sliding_window(&s, 5, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].data(), s.data());
    }

    #[test]
    fn window_longer_than_series_is_error() {
        assert!(sliding_window(&ramp(1, 3), 4, 1).is_err());
    }
}
