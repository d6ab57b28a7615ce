//! Cross-modal alignment: one encoder per modality trained with a cosine
//! triplet margin loss so that same-class projections land close together.

mod sampling;
mod train;

use std::sync::atomic::{AtomicBool, Ordering};

pub use sampling::{sample_triplets, AnchorMode, Triplet, TrainingPool};
pub use train::{
    batch_gradient, train, train_with_observer, BatchGradient, EpochStats, LanguageArch, Manifold, TrainConfig, TrainOutcome,
};

use crate::error::{Error, Result};

static ZERO_NORM_WARNED: AtomicBool = AtomicBool::new(false);

fn warn_zero_norm() {
    if !ZERO_NORM_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("cosine distance with a zero-norm vector; using distance 1");
    }
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("vector dims differ: {} vs {}", u.len(), v.len())));
    }
    Ok(())
}

/// `1 - u.v / (|u| |v|)`, in `[0, 2]`. A zero-norm argument gives 1.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        warn_zero_norm();
        return Ok(1.0);
    }
    Ok((1.0 - dot / (uu.sqrt() * vv.sqrt())).clamp(0.0, 2.0))
}

/// Distance together with its gradients with respect to `u` and `v`.
/// Zero-norm arguments yield zero gradients.
pub fn cosine_distance_grad(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_dims(u, v)?;
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        warn_zero_norm();
        return Ok((1.0, vec![0.0; u.len()], vec![0.0; v.len()]));
    }
    let (nu, nv) = (uu.sqrt(), vv.sqrt());
    let sim = dot / (nu * nv);
    let du = u.iter().zip(v).map(|(a, b)| -(b / (nu * nv) - sim * a / uu)).collect();
    let dv = u.iter().zip(v).map(|(a, b)| -(a / (nu * nv) - sim * b / vv)).collect();
    Ok((1.0 - sim, du, dv))
}

/// `max(d(a, p) - d(a, n) + margin, 0)` with cosine distance.
pub fn triplet_loss(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> Result<f64> {
    Ok(hinge(cosine_distance(a, p)?, cosine_distance(a, n)?, margin))
}

pub(crate) fn hinge(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_landmarks() {
        assert!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap() < 1e-15);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert!((cosine_distance(&[1.0, -2.0], &[-1.0, 2.0]).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(cosine_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn loss_landmarks() {
        assert_eq!(hinge(0.1, 0.6, 0.4), 0.0);
        assert!((hinge(0.5, 0.2, 0.4) - 0.7).abs() < 1e-15);
        let a = [1.0, 0.0];
        assert_eq!(triplet_loss(&a, &a, &[0.0, 1.0], 0.4).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let u = [0.3, -1.2, 0.7];
        let v = [-0.4, 0.5, 2.0];
        let (_, du, dv) = cosine_distance_grad(&u, &v).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut up = u;
            let mut um = u;
            up[k] += h;
            um[k] -= h;
            let num = (cosine_distance(&up, &v).unwrap() - cosine_distance(&um, &v).unwrap()) / (2.0 * h);
            assert!((num - du[k]).abs() < 1e-8);
            let mut vp = v;
            let mut vm = v;
            vp[k] += h;
            vm[k] -= h;
            let num = (cosine_distance(&u, &vp).unwrap() - cosine_distance(&u, &vm).unwrap()) / (2.0 * h);
            assert!((num - dv[k]).abs() < 1e-8);
        }
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0..10.0f64, 3).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn scale_invariant(u in vec3(), v in vec3(), c in 0.01..100.0f64) {
            let scaled: Vec<f64> = u.iter().map(|x| x * c).collect();
            let d1 = cosine_distance(&u, &v).unwrap();
            let d2 = cosine_distance(&scaled, &v).unwrap();
            prop_assert!((d1 - d2).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&d1));
        }

        #[test]
        fn loss_nonnegative_and_zero_iff_margin_met(a in vec3(), p in vec3(), n in vec3(), m in 0.0..1.0f64) {
            let l = triplet_loss(&a, &p, &n, m).unwrap();
            prop_assert!(l >= 0.0);
            let dap = cosine_distance(&a, &p).unwrap();
            let dan = cosine_distance(&a, &n).unwrap();
            prop_assert_eq!(l == 0.0, dan >= dap + m);
        }
    }
}
