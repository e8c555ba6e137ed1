//! Proxy quality measures over sets of generated feature vectors.
//!
//! `frechet_distance` is the Gaussian-fit Fréchet distance (the FID formula without an
//! inception network). `mode_fidelity` and `mode_coverage` measure closeness to and
//! coverage of a known set of ground-truth modes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Diagonal regularization added to fitted covariances.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

/// A non-empty set of equal-length, finite feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct FeatureSet<T> {
    features: Vec<Vec<T>>,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn new(features: Vec<Vec<T>>) -> Result<Self> {
        let dim = features
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::param("feature set is empty"))?;
        if dim == 0 {
            return Err(Error::param("feature dimension must be >= 1"));
        }
        for (i, f) in features.iter().enumerate() {
            if f.len() != dim {
                return Err(Error::param(format!(
                    "feature {i} has dimension {}, expected {dim}",
                    f.len()
                )));
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::param(format!("feature {i} is not finite")));
            }
        }
        Ok(FeatureSet { features })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<T>] {
        &self.features
    }

    pub fn into_inner(self) -> Vec<Vec<T>> {
        self.features
    }

    /// Mean and population covariance (divide by `m`), covariance row-major `d × d`.
    pub fn moments(&self) -> (Vec<T>, Vec<T>) {
        let d = self.dim();
        let m = T::from_usize_lossy(self.len());
        let mut mean = vec![T::zero(); d];
        for f in &self.features {
            for (acc, &x) in mean.iter_mut().zip(f) {
                *acc = *acc + x;
            }
        }
        mean.iter_mut().for_each(|v| *v = *v / m);
        let mut cov = vec![T::zero(); d * d];
        for f in &self.features {
            for i in 0..d {
                let ci = f[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] = cov[i * d + j] + ci * (f[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / m;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        (mean, cov)
    }
}

/// Eigenvalues and eigenvectors (columns of `vectors`, row-major) of a symmetric matrix,
/// by cyclic Jacobi rotations.
pub(crate) fn symmetric_eigen<T: Scalar>(matrix: &[T], d: usize) -> (Vec<T>, Vec<T>) {
    let mut a = matrix.to_vec();
    let mut v = vec![T::zero(); d * d];
    for i in 0..d {
        v[i * d + i] = T::one();
    }
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..d {
            diag = diag + a[i * d + i] * a[i * d + i];
            for j in i + 1..d {
                off = off + a[i * d + j] * a[i * d + j];
            }
        }
        if off <= T::epsilon() * T::epsilon() * diag || off == T::zero() {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..d).map(|i| a[i * d + i]).collect();
    (values, v)
}

/// Principal square root of a symmetric positive semi-definite matrix; negative
/// eigenvalues are clamped to zero.
pub(crate) fn psd_sqrt<T: Scalar>(matrix: &[T], d: usize) -> Vec<T> {
    let (values, vectors) = symmetric_eigen(matrix, d);
    let roots: Vec<T> = values.iter().map(|&l| l.max(T::zero()).sqrt()).collect();
    let mut out = vec![T::zero(); d * d];
    for i in 0..d {
        for j in i..d {
            let mut s = T::zero();
            for k in 0..d {
                s = s + vectors[i * d + k] * roots[k] * vectors[j * d + k];
            }
            out[i * d + j] = s;
            out[j * d + i] = s;
        }
    }
    out
}

fn matmul<T: Scalar>(a: &[T], b: &[T], d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] = out[i * d + j] + aik * b[k * d + j];
            }
        }
    }
    out
}

/// Squared Fréchet distance between Gaussian fits of two feature sets:
/// `‖μ_A − μ_B‖² + tr(Σ_A + Σ_B − 2 (Σ_A^½ Σ_B Σ_A^½)^½)`.
pub fn frechet_distance<T: Scalar>(a: &FeatureSet<T>, b: &FeatureSet<T>) -> Result<T> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::param(format!(
            "frechet distance needs >= 2 samples per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::param(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let d = a.dim();
    let ridge = T::lit(COVARIANCE_RIDGE);
    let (mu_a, mut cov_a) = a.moments();
    let (mu_b, mut cov_b) = b.moments();
    for i in 0..d {
        cov_a[i * d + i] = cov_a[i * d + i] + ridge;
        cov_b[i * d + i] = cov_b[i * d + i] + ridge;
    }
    let mean_term = mu_a
        .iter()
        .zip(&mu_b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
    let root_a = psd_sqrt(&cov_a, d);
    let mut inner = matmul(&matmul(&root_a, &cov_b, d), &root_a, d);
    for i in 0..d {
        for j in i + 1..d {
            let s = (inner[i * d + j] + inner[j * d + i]) / T::lit(2.0);
            inner[i * d + j] = s;
            inner[j * d + i] = s;
        }
    }
    let (values, _) = symmetric_eigen(&inner, d);
    let tr_cross = values
        .iter()
        .fold(T::zero(), |acc, &l| acc + l.max(T::zero()).sqrt());
    let trace = |c: &[T]| (0..d).fold(T::zero(), |acc, i| acc + c[i * d + i]);
    let value = mean_term + trace(&cov_a) + trace(&cov_b) - T::lit(2.0) * tr_cross;
    if !value.is_finite() {
        return Err(Error::Numerical("frechet distance is not finite".into()));
    }
    Ok(value.max(T::zero()))
}

fn dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

fn nearest_mode_distance<T: Scalar>(x: &[T], modes: &[Vec<T>]) -> T {
    modes
        .iter()
        .map(|m| dist(x, m))
        .fold(T::infinity(), T::min)
}

fn check_modes<T: Scalar>(outputs: &FeatureSet<T>, modes: &[Vec<T>]) -> Result<()> {
    if modes.is_empty() {
        return Err(Error::param("at least one mode is required"));
    }
    if let Some(m) = modes.iter().find(|m| m.len() != outputs.dim()) {
        return Err(Error::param(format!(
            "mode dimension {} does not match output dimension {}",
            m.len(),
            outputs.dim()
        )));
    }
    Ok(())
}

/// Mean distance from each output to its nearest mode. Lower is better.
pub fn mode_fidelity<T: Scalar>(outputs: &FeatureSet<T>, modes: &[Vec<T>]) -> Result<T> {
    check_modes(outputs, modes)?;
    let total = outputs
        .features()
        .iter()
        .fold(T::zero(), |acc, x| acc + nearest_mode_distance(x, modes));
    Ok(total / T::from_usize_lossy(outputs.len()))
}

/// Fraction of modes with at least one output within `radius`.
pub fn mode_coverage<T: Scalar>(outputs: &FeatureSet<T>, modes: &[Vec<T>], radius: T) -> Result<T> {
    check_modes(outputs, modes)?;
    if !(radius > T::zero()) {
        return Err(Error::param(format!("radius must be positive, got {radius}")));
    }
    let covered = modes
        .iter()
        .filter(|m| outputs.features().iter().any(|x| dist(x, m) <= radius))
        .count();
    Ok(T::from_usize_lossy(covered) / T::from_usize_lossy(modes.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn randn_set(seed: u64, m: usize, d: usize) -> FeatureSet<f64> {
        let mut r = rng::stream(seed, &[17]);
        FeatureSet::new(
            (0..m)
                .map(|_| (0..d).map(|_| r.sample(StandardNormal)).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let a = vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0];
        let (vals, vecs) = symmetric_eigen(&a, 3);
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3).map(|k| vecs[i * 3 + k] * vals[k] * vecs[j * 3 + k]).sum();
                assert!((r - a[i * 3 + j]).abs() < 1e-12);
            }
        }
        let s = psd_sqrt(&a, 3);
        let sq = matmul(&s, &s, 3);
        for (x, y) in sq.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn frechet_identical_sets_is_zero() {
        let a = randn_set(1, 50, 6);
        assert!(frechet_distance(&a, &a).unwrap() <= 1e-8);
    }

    #[test]
    fn frechet_one_dimensional_closed_form() {
        // Population moments (0, 1) and (3, 2).
        let a = FeatureSet::new(vec![vec![-1.0f64], vec![1.0]]).unwrap();
        let b = FeatureSet::new(vec![vec![1.0], vec![5.0]]).unwrap();
        let fd = frechet_distance(&a, &b).unwrap();
        assert!((fd - 10.0).abs() < 1e-6, "{fd}");
    }

    #[test]
    fn frechet_is_symmetric() {
        let a = randn_set(2, 40, 5);
        let b = randn_set(3, 60, 5);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() <= 1e-8, "{ab} vs {ba}");
    }

    #[test]
    fn frechet_needs_two_samples() {
        let a = FeatureSet::new(vec![vec![0.0]]).unwrap();
        let b = FeatureSet::new(vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Parameter(_))));
        let c = FeatureSet::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(frechet_distance(&b, &c).is_err());
    }

    #[test]
    fn feature_set_rejects_bad_input() {
        assert!(FeatureSet::<f64>::new(vec![]).is_err());
        assert!(FeatureSet::new(vec![vec![0.0], vec![0.0, 1.0]]).is_err());
        assert!(FeatureSet::new(vec![vec![f64::INFINITY]]).is_err());
    }

    #[test]
    fn fidelity_examples() {
        let modes = vec![vec![0.0, 0.0], vec![5.0, 5.0]];
        let at_modes = FeatureSet::new(modes.clone()).unwrap();
        assert_eq!(mode_fidelity(&at_modes, &modes).unwrap(), 0.0);
        let single = FeatureSet::new(vec![vec![3.0, 4.0]]).unwrap();
        assert_eq!(mode_fidelity(&single, &[vec![0.0, 0.0]]).unwrap(), 5.0);
        assert!(mode_fidelity(&single, &[]).is_err());
    }

    #[test]
    fn fidelity_matches_exhaustive_scan() {
        let outputs = randn_set(5, 30, 4);
        let modes = randn_set(6, 5, 4).into_inner();
        let mut total = 0.0;
        for x in outputs.features() {
            let mut best = f64::INFINITY;
            for m in &modes {
                let d: f64 = x.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if d < best {
                    best = d;
                }
            }
            total += best;
        }
        let expected = total / 30.0;
        let got = mode_fidelity(&outputs, &modes).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn coverage_examples() {
        let modes: Vec<Vec<f64>> = (0..4).map(|i| vec![10.0 * i as f64]).collect();
        let all = FeatureSet::new(modes.clone()).unwrap();
        assert_eq!(mode_coverage(&all, &modes, 1.0).unwrap(), 1.0);
        let collapsed = FeatureSet::new(vec![vec![20.0]; 5]).unwrap();
        assert_eq!(mode_coverage(&collapsed, &modes, 1.0).unwrap(), 0.25);
        assert!(mode_coverage(&collapsed, &modes, 0.0).is_err());
    }

    #[test]
    fn coverage_matches_exhaustive_check() {
        let outputs = randn_set(7, 12, 3);
        let modes = randn_set(8, 9, 3).into_inner();
        let radius = 1.2;
        let mut covered = 0;
        for m in &modes {
            let mut hit = false;
            for x in outputs.features() {
                let d: f64 = x.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                hit |= d <= radius;
            }
            covered += hit as usize;
        }
        assert_eq!(
            mode_coverage(&outputs, &modes, radius).unwrap(),
            covered as f64 / 9.0
        );
    }

    proptest! {
        #[test]
        fn frechet_translation_invariant(seed in 0u64..200, shift in -50.0f64..50.0) {
            let a = randn_set(seed, 20, 3);
            let b = randn_set(seed + 1000, 25, 3);
            let move_by = |s: &FeatureSet<f64>| FeatureSet::new(
                s.features().iter().map(|f| f.iter().map(|x| x + shift).collect()).collect()
            ).unwrap();
            let base = frechet_distance(&a, &b).unwrap();
            let moved = frechet_distance(&move_by(&a), &move_by(&b)).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!((base - moved).abs() <= 1e-8 * (1.0 + shift.abs()), "{} vs {}", base, moved);
        }

        #[test]
        fn coverage_monotone_in_radius(seed in 0u64..200, r1 in 0.1f64..3.0, dr in 0.0f64..3.0) {
            let outputs = randn_set(seed, 10, 2);
            let modes = randn_set(seed + 1, 6, 2).into_inner();
            let lo = mode_coverage(&outputs, &modes, r1).unwrap();
            let hi = mode_coverage(&outputs, &modes, r1 + dr).unwrap();
            prop_assert!(lo <= hi);
        }

        #[test]
        fn fidelity_improves_when_output_moves_closer(seed in 0u64..200, idx in 0usize..10, t in 0.01f64..1.0) {
            let outputs = randn_set(seed, 10, 3);
            let modes = randn_set(seed + 7, 4, 3).into_inner();
            let before = mode_fidelity(&outputs, &modes).unwrap();
            let mut moved = outputs.clone().into_inner();
            let x = moved[idx].clone();
            let nearest = modes.iter().min_by(|a, b| dist(&x, a).partial_cmp(&dist(&x, b)).unwrap()).unwrap();
            if dist(&x, nearest) > 0.0 {
                moved[idx] = x.iter().zip(nearest).map(|(a, m)| a + t * (m - a)).collect();
                let after = mode_fidelity(&FeatureSet::new(moved).unwrap(), &modes).unwrap();
                prop_assert!(after < before);
            }
        }
    }
}
