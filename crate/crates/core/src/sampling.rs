//! Candidate selection strategies over a scored candidate set.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{Classification, ClassificationRule, DensityReport, DistanceMetric};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "top-k")]
    TopK,
    #[serde(rename = "small-k")]
    SmallK,
    #[serde(rename = "random-k")]
    RandomK,
    /// Top-k on high-density sets, random-k otherwise.
    #[serde(rename = "density-adaptive")]
    DensityAdaptive,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::TopK,
        Strategy::SmallK,
        Strategy::RandomK,
        Strategy::DensityAdaptive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::TopK => "top-k",
            Strategy::SmallK => "small-k",
            Strategy::RandomK => "random-k",
            Strategy::DensityAdaptive => "density-adaptive",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "topk" | "top" => Ok(Strategy::TopK),
            "smallk" | "small" => Ok(Strategy::SmallK),
            "randomk" | "random" => Ok(Strategy::RandomK),
            "densityadaptive" | "adaptive" | "varscaling" => Ok(Strategy::DensityAdaptive),
            _ => Err(Error::param(format!("unknown strategy `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "top-k")]
    TopK,
    #[serde(rename = "random-k")]
    RandomK,
    /// The strategy does not branch on density.
    #[serde(rename = "n/a")]
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SamplingConfig<T> {
    pub strategy: Strategy,
    /// Candidates drawn at the scaled step.
    pub n: usize,
    /// Representatives retained.
    pub k: usize,
    pub alpha: T,
    pub seed: u64,
    #[serde(default)]
    pub rule: ClassificationRule,
    #[serde(default)]
    pub metric: DistanceMetric,
}

impl<T: Scalar> SamplingConfig<T> {
    pub fn new(strategy: Strategy, n: usize, k: usize, alpha: T, seed: u64) -> Self {
        SamplingConfig {
            strategy,
            n,
            k,
            alpha,
            seed,
            rule: ClassificationRule::default(),
            metric: DistanceMetric::default(),
        }
    }

    pub fn with_rule(mut self, rule: ClassificationRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_metric(mut self, metric: DistanceMetric) -> Self {
        self.metric = metric;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::param("n must be >= 1"));
        }
        if self.k < 1 || self.k > self.n {
            return Err(Error::param(format!(
                "k must satisfy 1 <= k <= n, got k={} n={}",
                self.k, self.n
            )));
        }
        if !(self.alpha > T::zero()) || !self.alpha.is_finite() {
            return Err(Error::param(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SelectionResult<T> {
    pub selected_indices: Vec<usize>,
    pub branch_taken: Branch,
    pub report: DensityReport<T>,
    /// Selection probabilities aligned with `selected_indices`; sum to one.
    pub weights: Vec<T>,
}

fn check_k(k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::param("k must be >= 1"));
    }
    Ok(())
}

fn ranked<T: Scalar>(scores: &[T], k: usize, descending: bool) -> Result<Vec<usize>> {
    check_k(k)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if scores.len() <= k {
        return Ok(idx);
    }
    idx.sort_by(|&a, &b| {
        let ord = scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal);
        let ord = if descending { ord.reverse() } else { ord };
        ord.then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}

/// Indices of the `k` largest scores, in descending score order with ties by lowest index.
/// Returns every index, in index order, when `n <= k`.
pub fn top_k_select<T: Scalar>(scores: &[T], k: usize) -> Result<Vec<usize>> {
    ranked(scores, k, true)
}

/// Indices of the `k` smallest scores, ascending, ties by lowest index.
pub fn small_k_select<T: Scalar>(scores: &[T], k: usize) -> Result<Vec<usize>> {
    ranked(scores, k, false)
}

/// `k` distinct indices drawn uniformly without replacement from `0..n`.
/// Returns every index when `n <= k`.
pub fn random_k_select<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_k(k)?;
    if n <= k {
        return Ok((0..n).collect());
    }
    Ok(rand::seq::index::sample(rng, n, k).into_vec())
}

/// Scores of the selected candidates normalized to sum to one; uniform if they sum to zero.
pub fn selection_weights<T: Scalar>(scores: &[T], selected: &[usize]) -> Vec<T> {
    let picked: Vec<T> = selected.iter().map(|&i| scores[i]).collect();
    let total = picked.iter().fold(T::zero(), |a, &s| a + s);
    if total > T::zero() && total.is_finite() {
        picked.into_iter().map(|s| s / total).collect()
    } else {
        let u = T::one() / T::from_usize_lossy(selected.len().max(1));
        vec![u; selected.len()]
    }
}

/// Scores the candidate set and applies `config.strategy`.
///
/// Every strategy computes the full density report; only the density-adaptive strategy
/// branches on its classification.
pub fn select<T: Scalar, V: AsRef<[T]>, R: Rng + ?Sized>(
    features: &[V],
    config: &SamplingConfig<T>,
    rng: &mut R,
) -> Result<SelectionResult<T>> {
    config.validate()?;
    if features.len() != config.n {
        return Err(Error::param(format!(
            "expected {} candidates, got {}",
            config.n,
            features.len()
        )));
    }
    let report = DensityReport::compute(features, config.alpha, config.rule, config.metric)?;
    let n = features.len();
    let (selected_indices, branch_taken) = match config.strategy {
        Strategy::TopK => (top_k_select(&report.scores, config.k)?, Branch::NotApplicable),
        Strategy::SmallK => (small_k_select(&report.scores, config.k)?, Branch::NotApplicable),
        Strategy::RandomK => (random_k_select(n, config.k, rng)?, Branch::NotApplicable),
        Strategy::DensityAdaptive => match report.classification {
            Classification::High => (top_k_select(&report.scores, config.k)?, Branch::TopK),
            Classification::Low => (random_k_select(n, config.k, rng)?, Branch::RandomK),
        },
    };
    let weights = selection_weights(&report.scores, &selected_indices);
    Ok(SelectionResult {
        selected_indices,
        branch_taken,
        report,
        weights,
    })
}

/// The density-adaptive hybrid: top-k when the set is classified high-density,
/// uniform random-k otherwise.
pub fn density_adaptive_select<T: Scalar, V: AsRef<[T]>, R: Rng + ?Sized>(
    features: &[V],
    config: &SamplingConfig<T>,
    rng: &mut R,
) -> Result<SelectionResult<T>> {
    let config = SamplingConfig {
        strategy: Strategy::DensityAdaptive,
        ..config.clone()
    };
    select(features, &config, rng)
}

/// Draws one selected index with probability proportional to its weight.
pub fn weighted_pick<T: Scalar, R: Rng + ?Sized>(
    selection: &SelectionResult<T>,
    rng: &mut R,
) -> Result<usize> {
    let sel = &selection.selected_indices;
    if sel.is_empty() {
        return Err(Error::State("cannot pick from an empty selection".into()));
    }
    if selection.weights.len() != sel.len() {
        return Err(Error::State("selection weights do not match its indices".into()));
    }
    let weights: Vec<f64> = selection
        .weights
        .iter()
        .map(|w| w.to_f64_lossy().max(0.0))
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Ok(sel[rng.random_range(0..sel.len())]);
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return Ok(sel[i]);
        }
    }
    // Rounding can leave `target` at the very top of the last bucket.
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(sel.len() - 1);
    Ok(sel[last])
}
