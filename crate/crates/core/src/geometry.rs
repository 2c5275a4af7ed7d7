//! Hyperspherical feature-space helpers: magnitude normalization onto the
//! radius-`sqrt(C)` sphere, cosine similarity and the exponentiated cosine
//! critic used by the contrastive losses.

use alloc::vec::Vec;
use core::ops::Deref;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Norms at or below this are treated as degenerate embeddings.
pub const NORM_EPS: f64 = 1e-12;

/// A tensor whose last-axis slices all have norm `sqrt(C)`.
#[derive(Debug, Clone)]
pub struct HypersphereVector(Tensor);

impl HypersphereVector {
    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn radius(&self) -> f64 {
        let c = *self.0.shape().last().unwrap_or(&1);
        math::sqrt(c as f64)
    }
}

impl Deref for HypersphereVector {
    type Target = Tensor;

    fn deref(&self) -> &Tensor {
        &self.0
    }
}

/// Rescales each last-axis slice of `z` to norm `sqrt(C)`.
///
/// The gradient is the exact Jacobian of normalize-then-scale. A slice with
/// norm at or below [`NORM_EPS`] is an error naming the slice index.
pub fn mag_norm(z: &Tensor) -> Result<HypersphereVector> {
    if z.rank() == 0 {
        return Err(Error::ShapeMismatch {
            op: "mag_norm",
            lhs: Vec::new(),
            rhs: alloc::vec![1],
        });
    }
    let axis = z.rank() - 1;
    let c = z.shape()[axis];
    let norms = z.l2_norm(axis, true)?;
    if let Some((index, &norm)) = norms.data().iter().enumerate().find(|(_, &n)| n <= NORM_EPS) {
        return Err(Error::DegenerateEmbedding { index, norm });
    }
    Ok(HypersphereVector(z.div(&norms)?.scale(math::sqrt(c as f64))))
}

fn norm(a: &[f64]) -> f64 {
    math::sqrt(a.iter().map(|v| v * v).sum())
}

/// `a.b / (|a| |b|)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            lhs: alloc::vec![a.len()],
            rhs: alloc::vec![b.len()],
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na <= NORM_EPS {
        return Err(Error::DegenerateEmbedding { index: 0, norm: na });
    }
    if nb <= NORM_EPS {
        return Err(Error::DegenerateEmbedding { index: 1, norm: nb });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub(crate) fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(alloc::format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    Ok(())
}

/// `exp(cos(a, b) / tau)`.
pub fn critic(a: &[f64], b: &[f64], tau: f64) -> Result<f64> {
    check_temperature(tau)?;
    Ok(math::exp(cosine_similarity(a, b)? / tau))
}

/// Angle between two vectors in radians.
pub fn angle(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(math::acos(cosine_similarity(a, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mag_norm_three_four() {
        let z = Tensor::from_vec(alloc::vec![3.0, 4.0], &[2]).unwrap();
        let m = mag_norm(&z).unwrap();
        assert!((m.data()[0] - 0.848_528_137_423_857).abs() < 1e-12);
        assert!((m.data()[1] - 1.131_370_849_898_476).abs() < 1e-12);
    }

    #[test]
    fn mag_norm_unit_dimension() {
        let z = Tensor::from_vec(alloc::vec![-1.0], &[1]).unwrap();
        assert_eq!(mag_norm(&z).unwrap().data(), &[-1.0]);
    }

    #[test]
    fn mag_norm_degenerate_row_names_index() {
        let z = Tensor::from_vec(alloc::vec![1.0, 0.0, 0.0, 0.0], &[2, 2]).unwrap();
        assert!(matches!(
            mag_norm(&z),
            Err(Error::DegenerateEmbedding { index: 1, .. })
        ));
    }

    #[test]
    fn cosine_cases() {
        let a = [1.0, 2.0, -1.0];
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((cosine_similarity(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn critic_cases() {
        let a = [0.3, -0.2, 0.9];
        assert!((critic(&a, &a, 0.1).unwrap() - 22_026.465_794_806_718).abs() < 1e-6);
        assert_eq!(critic(&[1.0, 0.0], &[0.0, 1.0], 0.7).unwrap(), 1.0);
        assert!(matches!(critic(&a, &a, 0.0), Err(Error::Config(_))));
        assert!(critic(&a, &a, -1.0).is_err());
        let b = [0.5, 0.1, -0.4];
        let b5: Vec<f64> = b.iter().map(|v| 5.0 * v).collect();
        let (x, y) = (critic(&a, &b, 0.1).unwrap(), critic(&a, &b5, 0.1).unwrap());
        assert!((x - y).abs() <= 1e-12 * x);
    }

    proptest! {
        #[test]
        fn mag_norm_lands_on_sphere(v in proptest::collection::vec(-10.0f64..10.0, 1..32)) {
            prop_assume!(norm(&v) >= 1e-6);
            let c = v.len();
            let z = Tensor::from_vec(v, &[c]).unwrap();
            let m = mag_norm(&z).unwrap();
            prop_assert!((norm(m.data()) - math::sqrt(c as f64)).abs() < 1e-9);
            let again = mag_norm(&m).unwrap();
            for (p, q) in again.data().iter().zip(m.data()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn critic_is_symmetric(
            a in proptest::collection::vec(-1.0f64..1.0, 4),
            b in proptest::collection::vec(-1.0f64..1.0, 4),
            tau in 0.05f64..2.0,
        ) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            prop_assert_eq!(critic(&a, &b, tau).unwrap(), critic(&b, &a, tau).unwrap());
        }

        #[test]
        fn critic_monotone_in_similarity_and_temperature(
            s1 in -0.99f64..0.99, ds in 0.001f64..0.5, tau in 0.05f64..1.0, dt in 0.01f64..1.0,
        ) {
            let s2 = (s1 + ds).min(1.0);
            let unit = |s: f64| [s, math::sqrt(1.0 - s * s)];
            let e = [1.0, 0.0];
            prop_assert!(critic(&e, &unit(s1), tau).unwrap() < critic(&e, &unit(s2), tau).unwrap());
            if s2 > 0.0 {
                prop_assert!(critic(&e, &unit(s2), tau).unwrap() > critic(&e, &unit(s2), tau + dt).unwrap());
            }
        }
    }
}
