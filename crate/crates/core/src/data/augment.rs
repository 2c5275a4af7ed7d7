use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::Modality;
use crate::error::{Error, Result};
use crate::math;
use crate::nn::standard_normal;
use crate::rng::{seeded, Rng};

/// Spread of the amplitude scale factor around 1.
const SCALE_SIGMA: f64 = 0.1;
/// Spread of the local playback speed around 1.
const WARP_SIGMA: f64 = 0.2;
const WARP_KNOTS: usize = 4;

/// Concrete parameters of one augmentation draw.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    /// Positive local speeds at evenly spaced knots; all ones means no warp.
    pub warp_speeds: Vec<f64>,
    /// Applied to every 3-channel group (inertial and 3-D pose).
    pub rotation: [[f64; 3]; 3],
    /// Negates the x coordinate of every 2-D pose joint.
    pub flip_x: bool,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            warp_speeds: vec![1.0; WARP_KNOTS],
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            flip_x: false,
        }
    }

    /// Random draw for a modality: scaling and time warping for every view,
    /// plus a uniform 3-D rotation for inertial data, a rotation about the
    /// vertical axis for 3-D pose and a coin-flip mirror for 2-D pose.
    pub fn sample(modality: Modality, rng: &mut Rng) -> Self {
        let mut p = Self::identity();
        p.scale = 1.0 + SCALE_SIGMA * standard_normal(rng);
        p.warp_speeds = (0..WARP_KNOTS)
            .map(|_| (1.0 + WARP_SIGMA * standard_normal(rng)).max(0.1))
            .collect();
        match modality {
            Modality::Inertial => p.rotation = random_rotation(rng),
            Modality::Pose3d => {
                let a = 2.0 * core::f64::consts::PI * rng.random::<f64>();
                let (s, c) = (math::sin(a), math::cos(a));
                p.rotation = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
            }
            Modality::Pose2d => p.flip_x = rng.random::<bool>(),
        }
        p
    }
}

/// Uniform random rotation from a unit quaternion.
fn random_rotation(rng: &mut Rng) -> [[f64; 3]; 3] {
    let mut q = [0.0; 4];
    loop {
        for v in &mut q {
            *v = standard_normal(rng);
        }
        let n = math::sqrt(q.iter().map(|v| v * v).sum());
        if n > 1e-9 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Monotone map from output step to (fractional) source position, with
/// `map[0] = 0` and `map[len-1] = len-1`. Speeds are interpolated linearly
/// between knots and integrated.
pub fn time_warp_map(speeds: &[f64], len: usize) -> Vec<f64> {
    if len < 2 || speeds.is_empty() {
        return (0..len).map(|i| i as f64).collect();
    }
    let speed_at = |i: usize| {
        if speeds.len() == 1 {
            return speeds[0];
        }
        let pos = i as f64 / (len - 1) as f64 * (speeds.len() - 1) as f64;
        let k = (pos as usize).min(speeds.len() - 2);
        let f = pos - k as f64;
        speeds[k] + f * (speeds[k + 1] - speeds[k])
    };
    let mut map = vec![0.0; len];
    for i in 1..len {
        map[i] = map[i - 1] + speed_at(i);
    }
    let scale = (len - 1) as f64 / map[len - 1];
    for (i, m) in map.iter_mut().enumerate() {
        *m = if i == len - 1 { (len - 1) as f64 } else { *m * scale };
    }
    map
}

/// Applies explicit parameters to a `[channels, len]` window.
pub fn augment_with(
    window: &[f64],
    channels: usize,
    modality: Modality,
    params: &AugmentParams,
) -> Result<Vec<f64>> {
    if channels == 0 || window.len() % channels != 0 {
        return Err(Error::Data(alloc::format!(
            "window of {} values does not split into {channels} channels",
            window.len()
        )));
    }
    let len = window.len() / channels;
    let group = modality.group();
    if channels % group != 0 {
        return Err(Error::Data(alloc::format!(
            "{modality} view needs a multiple of {group} channels, got {channels}"
        )));
    }

    // time warp with linear resampling
    let map = time_warp_map(&params.warp_speeds, len);
    let mut out = vec![0.0; window.len()];
    for c in 0..channels {
        let src = &window[c * len..(c + 1) * len];
        for (t, &pos) in map.iter().enumerate() {
            let i0 = (pos as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let f = pos - i0 as f64;
            out[c * len + t] = if f == 0.0 { src[i0] } else { src[i0] + f * (src[i1] - src[i0]) };
        }
    }

    // spatial transform per channel group and time step
    match modality {
        Modality::Inertial | Modality::Pose3d => {
            let r = &params.rotation;
            for g in 0..channels / 3 {
                for t in 0..len {
                    let v = [
                        out[(3 * g) * len + t],
                        out[(3 * g + 1) * len + t],
                        out[(3 * g + 2) * len + t],
                    ];
                    for (row, rr) in r.iter().enumerate() {
                        out[(3 * g + row) * len + t] = rr[0] * v[0] + rr[1] * v[1] + rr[2] * v[2];
                    }
                }
            }
        }
        Modality::Pose2d => {
            if params.flip_x {
                for g in 0..channels / 2 {
                    out[2 * g * len..(2 * g + 1) * len]
                        .iter_mut()
                        .for_each(|x| *x = -*x);
                }
            }
        }
    }

    if params.scale != 1.0 {
        out.iter_mut().for_each(|x| *x *= params.scale);
    }
    Ok(out)
}

/// Random label-preserving augmentation of a `[channels, len]` window,
/// deterministic per seed.
pub fn augment(window: &[f64], channels: usize, modality: Modality, seed: u64) -> Result<Vec<f64>> {
    let params = AugmentParams::sample(modality, &mut seeded(seed));
    augment_with(window, channels, modality, &params)
}
