//! JSON scenario files describing a synthetic predictive model.
//!
//! ```json
//! {
//!   "name": "bimodal",
//!   "codebook": {"V": 16, "C": 4, "seed": 7},
//!   "schedule": [[1,1],[2,2],[3,3],[4,4],[5,5],[6,6],[8,8],[10,10],[13,13],[16,16]],
//!   "modes": {"count": 2, "weights": [0.6, 0.4], "seed": 3},
//!   "temperature": 1.0,
//!   "smoothing": 0.01
//! }
//! ```
//!
//! `modes` may instead list every scale explicitly as
//! `[{"maps": [[tokens...], ...], "weights": [...]}, ...]`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::{make_synthetic_codebook, Codebook, TokenMap};
use crate::error::{Error, Result};
use crate::pipeline::{PerScale, PredictiveModel, ScaleModes, ScaleSchedule};
use crate::rng::{self, domain};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodebookSpec {
    #[serde(rename = "V")]
    pub vocab: usize,
    #[serde(rename = "C")]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    /// Explicit entries; when absent the codebook is drawn from `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Shared(Vec<f64>),
    PerScale(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplicitScaleModes {
    /// Row-major tokens of every mode at this scale.
    pub maps: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModeSpec {
    /// `count` modes with random, pairwise-distinct maps at every scale.
    Generated {
        count: usize,
        weights: WeightSpec,
        #[serde(default)]
        seed: u64,
    },
    Explicit(Vec<ExplicitScaleModes>),
}

fn default_temperature() -> f64 {
    1.0
}

fn default_smoothing() -> f64 {
    0.01
}

fn default_pool() -> usize {
    2
}

fn default_reference_samples() -> usize {
    1000
}

fn zero_knob() -> PerScale {
    PerScale::Uniform(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub codebook: CodebookSpec,
    #[serde(default)]
    pub schedule: ScaleSchedule,
    pub modes: ModeSpec,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default = "zero_knob")]
    pub token_noise: PerScale,
    #[serde(default = "zero_knob")]
    pub coupling: PerScale,
    /// Radius for mode coverage; defaults to half the smallest distance between mode outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_radius: Option<f64>,
    /// Outputs are average-pooled to `frechet_pool × frechet_pool` cells for the Fréchet metric.
    #[serde(default = "default_pool")]
    pub frechet_pool: usize,
    /// Plain generations forming the Fréchet reference set.
    #[serde(default = "default_reference_samples")]
    pub reference_samples: usize,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Scenario {
    pub fn from_json_str(text: &str, source_name: &str) -> Result<Self> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| Error::config(source_name, &e))?;
        // Surface model-level problems at load time.
        scenario.build_model::<f64>()?;
        Ok(scenario)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn build_codebook<T: Scalar>(&self) -> Result<Codebook<T>> {
        let spec = &self.codebook;
        match &spec.entries {
            Some(entries) => {
                let entries: Vec<Vec<T>> = entries
                    .iter()
                    .map(|e| e.iter().map(|&x| T::lit(x)).collect())
                    .collect();
                let cb = Codebook::new(entries, false)?;
                if cb.vocab_size() != spec.vocab || cb.dim() != spec.dim {
                    return Err(Error::param(format!(
                        "codebook entries are {}x{}, declared V={} C={}",
                        cb.vocab_size(),
                        cb.dim(),
                        spec.vocab,
                        spec.dim
                    )));
                }
                Ok(cb)
            }
            None => make_synthetic_codebook(spec.vocab, spec.dim, spec.seed),
        }
    }

    fn build_modes(&self) -> Result<Vec<ScaleModes>> {
        let schedule = &self.schedule;
        let vocab = self.codebook.vocab;
        match &self.modes {
            ModeSpec::Generated {
                count,
                weights,
                seed,
            } => {
                if *count == 0 {
                    return Err(Error::param("mode count must be >= 1"));
                }
                (0..schedule.len())
                    .map(|k| {
                        let (h, w) = schedule.resolution(k);
                        let distinct_maps = (vocab as f64).powi((h * w) as i32);
                        if distinct_maps < *count as f64 {
                            return Err(Error::param(format!(
                                "scale {k} cannot hold {count} distinct mode maps"
                            )));
                        }
                        let mut maps: Vec<TokenMap> = Vec::with_capacity(*count);
                        let mut r = rng::stream(*seed, &[domain::MODES, k as u64]);
                        while maps.len() < *count {
                            let tokens = (0..h * w).map(|_| r.random_range(0..vocab)).collect();
                            let m = TokenMap::new(k, h, w, tokens)?;
                            if !maps.contains(&m) {
                                maps.push(m);
                            }
                        }
                        let weights = match weights {
                            WeightSpec::Shared(v) => v.clone(),
                            WeightSpec::PerScale(v) => v
                                .get(k)
                                .cloned()
                                .ok_or_else(|| Error::param(format!("no mode weights for scale {k}")))?,
                        };
                        Ok(ScaleModes { maps, weights })
                    })
                    .collect()
            }
            ModeSpec::Explicit(scales) => scales
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    if k >= schedule.len() {
                        return Err(Error::param("more mode scales than schedule scales"));
                    }
                    let (h, w) = schedule.resolution(k);
                    let maps = s
                        .maps
                        .iter()
                        .map(|t| TokenMap::new(k, h, w, t.clone()))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(ScaleModes {
                        maps,
                        weights: s.weights.clone(),
                    })
                })
                .collect(),
        }
    }

    pub fn build_model<T: Scalar>(&self) -> Result<PredictiveModel<T>> {
        PredictiveModel::new(
            self.build_codebook()?,
            self.schedule.clone(),
            self.build_modes()?,
            self.temperature,
            self.smoothing,
            self.token_noise.clone(),
            self.coupling.clone(),
        )
    }
}
