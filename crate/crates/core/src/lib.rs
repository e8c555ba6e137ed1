//! Density-adaptive candidate selection for multi-scale autoregressive token-map generation.
//!
//! At one scale of a coarse-to-fine generator, `n` candidate token maps are drawn,
//! embedded through the codebook into Euclidean space and scored with a Gaussian kernel
//! density estimate. If the set has a pronounced density peak the top-k densest candidates
//! are kept; otherwise k candidates are kept at random.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! the common `f64` instantiations. The [`harness`] runs seeded experiment sweeps over a
//! synthetic generator described by a [`scenario`] file.

// `!(x > 0.0)` deliberately rejects NaN alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codebook;
pub mod density;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod scenario;

pub use codebook::{make_synthetic_codebook, TokenMap};
pub use density::{
    classify_density, kde_scores, pairwise_sq_distances, silverman_bandwidth, Classification,
    ClassificationRule, DistanceMetric,
};
pub use error::{Error, Result};
pub use metrics::{frechet_distance, mode_coverage, mode_fidelity};
pub use pipeline::{decode, generate, perturb_scale_experiment, sample_scale, ScaleSchedule};
pub use sampling::{
    density_adaptive_select, random_k_select, small_k_select, top_k_select, weighted_pick, Branch,
    Strategy,
};
pub use scalar::Scalar;

pub type Codebook = codebook::Codebook<f64>;
pub type Codebook32 = codebook::Codebook<f32>;
pub type DensityReport = density::DensityReport<f64>;
pub type DensityReport32 = density::DensityReport<f32>;
pub type SamplingConfig = sampling::SamplingConfig<f64>;
pub type SelectionResult = sampling::SelectionResult<f64>;
pub type FeatureSet = metrics::FeatureSet<f64>;
pub type FeatureSet32 = metrics::FeatureSet<f32>;
pub type PredictiveModel = pipeline::PredictiveModel<f64>;
pub type GenerationConfig = pipeline::GenerationConfig<f64>;
pub type GenerationTrace = pipeline::GenerationTrace<f64>;
pub type FeatureGrid = pipeline::FeatureGrid<f64>;
