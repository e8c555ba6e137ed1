//! Gaussian-kernel density scoring of candidate feature vectors and the
//! high/low density classification that drives branch selection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How inter-candidate distances are measured inside the kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    /// `1 - cos(x_i, x_j)` stands in for the squared distance.
    Cosine,
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::Cosine => "cosine",
        })
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "ed" | "l2" => Ok(DistanceMetric::Euclidean),
            "cosine" | "cs" => Ok(DistanceMetric::Cosine),
            other => Err(Error::param(format!("unknown distance metric `{other}`"))),
        }
    }
}

/// Density class of a candidate set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    High,
    Low,
}

/// Which inequality turns `(max, alpha * mean)` into a classification.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassificationRule {
    /// High iff the peak score reaches `alpha * mean`: a prominent peak means high density.
    #[default]
    #[serde(rename = "intent")]
    Intent,
    /// High iff `alpha * mean >= max`; low-density iff `alpha * mean < max`.
    #[serde(rename = "paper-literal")]
    Literal,
}

impl fmt::Display for ClassificationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassificationRule::Intent => "intent",
            ClassificationRule::Literal => "paper-literal",
        })
    }
}

impl FromStr for ClassificationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "intent" => Ok(ClassificationRule::Intent),
            "paper-literal" | "literal" => Ok(ClassificationRule::Literal),
            other => Err(Error::param(format!("unknown classification rule `{other}`"))),
        }
    }
}

fn check_features<T: Scalar, V: AsRef<[T]>>(features: &[V]) -> Result<usize> {
    let first = features
        .first()
        .ok_or_else(|| Error::param("empty candidate set"))?;
    let dim = first.as_ref().len();
    if dim == 0 {
        return Err(Error::param("feature dimension must be >= 1"));
    }
    if let Some((i, v)) = features
        .iter()
        .enumerate()
        .find(|(_, v)| v.as_ref().len() != dim)
    {
        return Err(Error::param(format!(
            "feature {i} has dimension {}, expected {dim}",
            v.as_ref().len()
        )));
    }
    Ok(dim)
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `n × n` matrix of squared Euclidean distances. The diagonal is exactly zero and the
/// matrix is exactly symmetric.
pub fn pairwise_sq_distances<T: Scalar, V: AsRef<[T]>>(features: &[V]) -> Result<Vec<Vec<T>>> {
    check_features(features)?;
    Ok(features
        .iter()
        .map(|a| features.iter().map(|b| sq_dist(a.as_ref(), b.as_ref())).collect())
        .collect())
}

/// Kernel-input distances with the number of pairs that fell back to Euclidean.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseDistances<T> {
    pub matrix: Vec<Vec<T>>,
    pub fallbacks: usize,
}

/// `1 - cos(x_i, x_j)` for every pair.
///
/// A pair involving a zero-norm vector uses its squared Euclidean distance instead and is
/// counted in `fallbacks` (each unordered off-diagonal pair once).
pub fn cosine_distances<T: Scalar, V: AsRef<[T]>>(features: &[V]) -> Result<PairwiseDistances<T>> {
    check_features(features)?;
    let norms: Vec<T> = features
        .iter()
        .map(|v| dot(v.as_ref(), v.as_ref()).sqrt())
        .collect();
    let n = features.len();
    let mut fallbacks = 0;
    let mut matrix = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (features[i].as_ref(), features[j].as_ref());
            let d = if norms[i] > T::zero() && norms[j] > T::zero() {
                T::one() - dot(a, b) / (norms[i] * norms[j])
            } else {
                fallbacks += 1;
                sq_dist(a, b)
            };
            matrix[i][j] = d;
            matrix[j][i] = d;
        }
    }
    if fallbacks > 0 {
        log::warn!("{fallbacks} zero-norm pair(s) fell back to euclidean distance");
    }
    Ok(PairwiseDistances { matrix, fallbacks })
}

pub fn pairwise_distances<T: Scalar, V: AsRef<[T]>>(
    features: &[V],
    metric: DistanceMetric,
) -> Result<PairwiseDistances<T>> {
    match metric {
        DistanceMetric::Euclidean => Ok(PairwiseDistances {
            matrix: pairwise_sq_distances(features)?,
            fallbacks: 0,
        }),
        DistanceMetric::Cosine => cosine_distances(features),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth<T> {
    /// Kernel bandwidth, floored at [`Scalar::SIGMA_FLOOR`].
    pub h: T,
    /// Mean over dimensions of the per-coordinate population standard deviation.
    pub sigma: T,
}

/// Silverman's rule for `n` samples in `d` dimensions:
/// `h = sigma * (n (d + 2) / 4)^(-1 / (d + 4))`.
pub fn silverman_bandwidth<T: Scalar, V: AsRef<[T]>>(features: &[V]) -> Result<Bandwidth<T>> {
    let dim = check_features(features)?;
    let n = T::from_usize_lossy(features.len());
    let mut sigma_sum = T::zero();
    for j in 0..dim {
        let mean = features.iter().map(|v| v.as_ref()[j]).fold(T::zero(), |a, x| a + x) / n;
        let var = features
            .iter()
            .map(|v| {
                let c = v.as_ref()[j] - mean;
                c * c
            })
            .fold(T::zero(), |a, x| a + x)
            / n;
        sigma_sum = sigma_sum + var.sqrt();
    }
    let d = T::from_usize_lossy(dim);
    let sigma = sigma_sum / d;
    if sigma < T::SIGMA_FLOOR {
        return Ok(Bandwidth {
            h: T::SIGMA_FLOOR,
            sigma,
        });
    }
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let factor = (n * (d + two) / four).powf(-T::one() / (d + four));
    Ok(Bandwidth {
        h: (sigma * factor).max(T::SIGMA_FLOOR),
        sigma,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeScores<T> {
    pub scores: Vec<T>,
    pub log_scores: Vec<T>,
}

/// Natural log of `1 / (n (2π)^(d/2) h^d)`.
pub fn log_normalizer<T: Scalar>(n: usize, dim: usize, h: T) -> T {
    let d = T::from_usize_lossy(dim);
    -T::from_usize_lossy(n).ln() - d / T::lit(2.0) * T::TAU().ln() - d * h.ln()
}

/// Gaussian-kernel density score of every candidate against the whole set.
///
/// Unnormalized, `score_i = Σ_j exp(-‖x_i − x_j‖² / 2h²)` with `j = i` included, so each
/// score lies in `[1, n]`. Normalized scores multiply by `1 / (n (2π)^(d/2) h^d)`, applied
/// in the log domain.
pub fn kde_scores<T: Scalar, V: AsRef<[T]>>(features: &[V], h: T, normalized: bool) -> Result<KdeScores<T>> {
    let dim = check_features(features)?;
    let sq = pairwise_sq_distances(features)?;
    kde_scores_from_distances(&sq, dim, h, normalized)
}

/// Same as [`kde_scores`] from a precomputed kernel-input distance matrix.
pub fn kde_scores_from_distances<T: Scalar>(
    sq_distances: &[Vec<T>],
    dim: usize,
    h: T,
    normalized: bool,
) -> Result<KdeScores<T>> {
    if !(h > T::zero()) || !h.is_finite() {
        return Err(Error::param(format!("bandwidth must be positive and finite, got {h}")));
    }
    let n = sq_distances.len();
    if n == 0 {
        return Err(Error::param("empty candidate set"));
    }
    let inv = T::one() / (T::lit(2.0) * h * h);
    let mut scores = Vec::with_capacity(n);
    let mut log_scores = Vec::with_capacity(n);
    for row in sq_distances {
        let exponents: Vec<T> = row.iter().map(|&d| -d * inv).collect();
        // Ascending j, fixed order.
        scores.push(exponents.iter().fold(T::zero(), |acc, &e| acc + e.exp()));
        let peak = exponents.iter().copied().fold(T::neg_infinity(), T::max);
        let shifted = exponents
            .iter()
            .fold(T::zero(), |acc, &e| acc + (e - peak).exp());
        log_scores.push(peak + shifted.ln());
    }
    if normalized {
        let log_c = log_normalizer(n, dim, h);
        let c = log_c.exp();
        for (s, l) in scores.iter_mut().zip(log_scores.iter_mut()) {
            *s = *s * c;
            *l = *l + log_c;
        }
    }
    Ok(KdeScores { scores, log_scores })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOutcome<T> {
    pub mean_score: T,
    pub max_score: T,
    /// `alpha * mean_score`.
    pub d_current: T,
    pub classification: Classification,
}

/// Compares the peak score against `alpha` times the mean score.
pub fn classify_density<T: Scalar>(
    scores: &[T],
    alpha: T,
    rule: ClassificationRule,
) -> Result<ThresholdOutcome<T>> {
    if scores.is_empty() {
        return Err(Error::param("cannot classify an empty score list"));
    }
    if !(alpha > T::zero()) {
        return Err(Error::param(format!("alpha must be positive, got {alpha}")));
    }
    let mean_score =
        scores.iter().fold(T::zero(), |a, &s| a + s) / T::from_usize_lossy(scores.len());
    let max_score = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let d_current = alpha * mean_score;
    let high = match rule {
        ClassificationRule::Intent => max_score >= d_current,
        ClassificationRule::Literal => d_current >= max_score,
    };
    Ok(ThresholdOutcome {
        mean_score,
        max_score,
        d_current,
        classification: if high {
            Classification::High
        } else {
            Classification::Low
        },
    })
}

/// Everything computed while scoring one candidate set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct DensityReport<T> {
    pub scores: Vec<T>,
    pub log_scores: Vec<T>,
    pub bandwidth: T,
    pub sigma: T,
    pub mean_score: T,
    pub max_score: T,
    pub d_current: T,
    pub classification: Classification,
    pub alpha: T,
    pub rule: ClassificationRule,
    pub metric: DistanceMetric,
    pub normalized: bool,
    /// Zero-norm pairs that fell back to Euclidean under the cosine metric.
    pub distance_fallbacks: usize,
}

impl<T: Scalar> DensityReport<T> {
    /// Bandwidth, unnormalized scores and classification for a candidate set.
    pub fn compute<V: AsRef<[T]>>(
        features: &[V],
        alpha: T,
        rule: ClassificationRule,
        metric: DistanceMetric,
    ) -> Result<Self> {
        Self::compute_with(features, alpha, rule, metric, false)
    }

    pub fn compute_with<V: AsRef<[T]>>(
        features: &[V],
        alpha: T,
        rule: ClassificationRule,
        metric: DistanceMetric,
        normalized: bool,
    ) -> Result<Self> {
        let dim = check_features(features)?;
        let bw = silverman_bandwidth(features)?;
        let dist = pairwise_distances(features, metric)?;
        let kde = kde_scores_from_distances(&dist.matrix, dim, bw.h, normalized)?;
        let t = classify_density(&kde.scores, alpha, rule)?;
        Ok(DensityReport {
            scores: kde.scores,
            log_scores: kde.log_scores,
            bandwidth: bw.h,
            sigma: bw.sigma,
            mean_score: t.mean_score,
            max_score: t.max_score,
            d_current: t.d_current,
            classification: t.classification,
            alpha,
            rule,
            metric,
            normalized,
            distance_fallbacks: dist.fallbacks,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}
