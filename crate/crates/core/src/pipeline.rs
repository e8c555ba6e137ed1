//! Desk-scale coarse-to-fine generator.
//!
//! A [`PredictiveModel`] plants a small number of global modes: each mode has a preferred
//! token map at every scale. The conditional distribution of the map at scale `k` is a
//! temperature-sharpened mixture over the modes, reweighted toward the mode the prefix
//! already committed to, with per-token noise and a small mass of uniformly random maps.
//! Decoding sums the nearest-neighbor upsampled embeddings of every scale.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, TokenMap};
use crate::error::{Error, Result};
use crate::rng::{self, domain, Stream};
use crate::sampling::{self, SamplingConfig, SelectionResult};
use crate::scalar::Scalar;

/// Ordered `(h, w)` resolutions, coarse to fine.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, usize)>", into = "Vec<(usize, usize)>")]
pub struct ScaleSchedule {
    resolutions: Vec<(usize, usize)>,
}

impl Default for ScaleSchedule {
    /// The ten-scale schedule `[1,1] … [16,16]`.
    fn default() -> Self {
        ScaleSchedule {
            resolutions: [1, 2, 3, 4, 5, 6, 8, 10, 13, 16].iter().map(|&s| (s, s)).collect(),
        }
    }
}

impl TryFrom<Vec<(usize, usize)>> for ScaleSchedule {
    type Error = Error;

    fn try_from(v: Vec<(usize, usize)>) -> Result<Self> {
        ScaleSchedule::new(v)
    }
}

impl From<ScaleSchedule> for Vec<(usize, usize)> {
    fn from(s: ScaleSchedule) -> Self {
        s.resolutions
    }
}

impl ScaleSchedule {
    pub fn new(resolutions: Vec<(usize, usize)>) -> Result<Self> {
        if resolutions.is_empty() {
            return Err(Error::param("schedule needs at least one scale"));
        }
        if resolutions.iter().any(|&(h, w)| h == 0 || w == 0) {
            return Err(Error::param("schedule resolutions must be positive"));
        }
        if resolutions.windows(2).any(|p| p[0].0 * p[0].1 > p[1].0 * p[1].1) {
            return Err(Error::param("schedule token counts must be non-decreasing"));
        }
        Ok(ScaleSchedule { resolutions })
    }

    pub fn len(&self) -> usize {
        self.resolutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resolutions.is_empty()
    }

    pub fn resolution(&self, scale: usize) -> (usize, usize) {
        self.resolutions[scale]
    }

    pub fn resolutions(&self) -> &[(usize, usize)] {
        &self.resolutions
    }

    /// Resolution of the last scale.
    pub fn output_resolution(&self) -> (usize, usize) {
        *self.resolutions.last().expect("schedule is non-empty")
    }

    fn check_scale(&self, scale: usize) -> Result<()> {
        if scale >= self.len() {
            return Err(Error::param(format!(
                "scale {scale} outside a schedule of {} scales",
                self.len()
            )));
        }
        Ok(())
    }
}

/// A knob given once for every scale or as one value per scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerScale {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerScale {
    pub fn at(&self, scale: usize) -> f64 {
        match self {
            PerScale::Uniform(v) => *v,
            PerScale::Each(v) => v[scale],
        }
    }

    fn check(&self, scales: usize, name: &str, lo: f64, hi: f64) -> Result<()> {
        let values: Vec<f64> = match self {
            PerScale::Uniform(v) => vec![*v],
            PerScale::Each(v) => {
                if v.len() != scales {
                    return Err(Error::param(format!(
                        "{name} lists {} values for {scales} scales",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if let Some(v) = values.iter().find(|v| !(**v >= lo && **v <= hi)) {
            return Err(Error::param(format!("{name} value {v} outside [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Preferred token maps of every mode at one scale, with their mixture weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleModes {
    pub maps: Vec<TokenMap>,
    pub weights: Vec<f64>,
}

/// Synthetic stand-in for `p(r_k | r_1 … r_{k−1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct PredictiveModel<T> {
    codebook: Codebook<T>,
    schedule: ScaleSchedule,
    modes: Vec<ScaleModes>,
    temperature: f64,
    /// Probability of drawing a uniformly random map instead of a mode map.
    smoothing: f64,
    /// Per-token probability of replacing a mode token with a uniform one.
    token_noise: PerScale,
    /// Log-weight bonus of the prefix's committed mode.
    coupling: PerScale,
}

impl<T: Scalar> PredictiveModel<T> {
    pub fn new(
        codebook: Codebook<T>,
        schedule: ScaleSchedule,
        modes: Vec<ScaleModes>,
        temperature: f64,
        smoothing: f64,
        token_noise: PerScale,
        coupling: PerScale,
    ) -> Result<Self> {
        let scales = schedule.len();
        if modes.len() != scales {
            return Err(Error::param(format!(
                "{} mode sets for {scales} scales",
                modes.len()
            )));
        }
        let count = modes[0].maps.len();
        if count == 0 {
            return Err(Error::param("at least one mode is required"));
        }
        for (k, sm) in modes.iter().enumerate() {
            if sm.maps.len() != count || sm.weights.len() != count {
                return Err(Error::param(format!(
                    "scale {k} needs {count} mode maps and weights"
                )));
            }
            if sm.weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
                return Err(Error::param(format!("scale {k} has a non-positive mode weight")));
            }
            let total: f64 = sm.weights.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::param(format!(
                    "scale {k} mode weights sum to {total}, expected 1"
                )));
            }
            for m in &sm.maps {
                if m.resolution() != schedule.resolution(k) || m.scale() != k {
                    return Err(Error::param(format!(
                        "mode map at scale {k} does not match resolution {:?}",
                        schedule.resolution(k)
                    )));
                }
                m.validate(codebook.vocab_size())?;
            }
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::param(format!("temperature must be positive, got {temperature}")));
        }
        if !(0.0..=1.0).contains(&smoothing) {
            return Err(Error::param(format!("smoothing must lie in [0, 1], got {smoothing}")));
        }
        token_noise.check(scales, "token_noise", 0.0, 1.0)?;
        coupling.check(scales, "coupling", 0.0, f64::MAX)?;
        Ok(PredictiveModel {
            codebook,
            schedule,
            modes,
            temperature,
            smoothing,
            token_noise,
            coupling,
        })
    }

    pub fn codebook(&self) -> &Codebook<T> {
        &self.codebook
    }

    pub fn schedule(&self) -> &ScaleSchedule {
        &self.schedule
    }

    pub fn modes(&self) -> &[ScaleModes] {
        &self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes[0].maps.len()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::param(format!("temperature must be positive, got {temperature}")));
        }
        self.temperature = temperature;
        Ok(self)
    }

    /// Index of the mode map closest in Hamming distance to `map`; ties go to the lowest index.
    pub fn nearest_mode(&self, map: &TokenMap) -> usize {
        let sm = &self.modes[map.scale()];
        (0..sm.maps.len())
            .min_by_key(|&g| (map.hamming(&sm.maps[g]), g))
            .expect("at least one mode")
    }

    /// Mode the prefix has committed to, as seen from scale `k`.
    ///
    /// Scale 1 follows the scale-0 mode; every later scale follows the scale-1 mode.
    pub fn anchor(&self, prefix: &[TokenMap], k: usize) -> Option<usize> {
        match k {
            0 => None,
            1 => prefix.first().map(|m| self.nearest_mode(m)),
            _ => prefix.get(1).map(|m| self.nearest_mode(m)),
        }
    }

    /// Mixture probabilities over modes at scale `k` given the prefix.
    pub fn mode_probabilities(&self, prefix: &[TokenMap], k: usize) -> Result<Vec<f64>> {
        self.schedule.check_scale(k)?;
        let anchor = self.anchor(prefix, k);
        let beta = self.coupling.at(k);
        let logits: Vec<f64> = self.modes[k]
            .weights
            .iter()
            .enumerate()
            .map(|(g, w)| {
                let bonus = if Some(g) == anchor { beta } else { 0.0 };
                (w.ln() + bonus) / self.temperature
            })
            .collect();
        let peak = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - peak).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / total).collect())
    }

    /// The chain of token maps that follows mode `g` at every scale.
    pub fn mode_chain(&self, g: usize) -> Vec<TokenMap> {
        self.modes.iter().map(|sm| sm.maps[g].clone()).collect()
    }

    /// Decoded, flattened output of every mode chain.
    pub fn mode_outputs(&self) -> Result<Vec<Vec<T>>> {
        (0..self.mode_count())
            .map(|g| Ok(decode(&self.codebook, &self.mode_chain(g), &self.schedule)?.into_data()))
            .collect()
    }
}

fn pick_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Draws the token map at scale `k` given the maps of every earlier scale.
///
/// Always consumes `2 + 2·h·w` variates from `rng` whatever branch is taken, so two streams
/// in lockstep stay in lockstep across models and prefixes.
pub fn sample_scale<T: Scalar, R: Rng + ?Sized>(
    model: &PredictiveModel<T>,
    prefix: &[TokenMap],
    k: usize,
    rng: &mut R,
) -> Result<TokenMap> {
    model.schedule.check_scale(k)?;
    if prefix.len() != k {
        return Err(Error::param(format!(
            "scale {k} needs a prefix of {k} maps, got {}",
            prefix.len()
        )));
    }
    let probs = model.mode_probabilities(prefix, k)?;
    let vocab = model.codebook.vocab_size();
    let (h, w) = model.schedule.resolution(k);
    let u_smooth: f64 = rng.random();
    let u_mode: f64 = rng.random();
    let smooth = u_smooth < model.smoothing;
    let mode = pick_index(&probs, u_mode);
    let noise = model.token_noise.at(k);
    let base = model.modes[k].maps[mode].tokens();
    let tokens = (0..h * w)
        .map(|p| {
            let u: f64 = rng.random();
            let t = rng.random_range(0..vocab);
            if smooth || u < noise {
                t
            } else {
                base[p]
            }
        })
        .collect();
    TokenMap::new(k, h, w, tokens)
}

/// A decoded `h × w × C` feature grid, row-major with channels innermost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct FeatureGrid<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureGrid<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureGrid {
            height,
            width,
            channels,
            data: vec![T::zero(); height * width * channels],
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> &[T] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    fn add_assign(&mut self, other: &FeatureGrid<T>) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    /// Euclidean distance between the flattened grids.
    pub fn distance(&self, other: &FeatureGrid<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
            .sqrt()
    }

    /// Average-pools into a `blocks × blocks` grid and flattens it.
    pub fn pooled(&self, blocks: usize) -> Vec<T> {
        let blocks = blocks.clamp(1, self.height.min(self.width));
        let mut sums = vec![T::zero(); blocks * blocks * self.channels];
        let mut counts = vec![0usize; blocks * blocks];
        for r in 0..self.height {
            let br = r * blocks / self.height;
            for c in 0..self.width {
                let bc = c * blocks / self.width;
                let b = br * blocks + bc;
                counts[b] += 1;
                for (ch, &v) in self.cell(r, c).iter().enumerate() {
                    sums[b * self.channels + ch] = sums[b * self.channels + ch] + v;
                }
            }
        }
        for (b, &n) in counts.iter().enumerate() {
            let n = T::from_usize_lossy(n);
            for ch in 0..self.channels {
                sums[b * self.channels + ch] = sums[b * self.channels + ch] / n;
            }
        }
        sums
    }
}

/// One scale's embedded map, nearest-neighbor upsampled to `(height, width)`.
pub fn upsampled_contribution<T: Scalar>(
    codebook: &Codebook<T>,
    map: &TokenMap,
    (height, width): (usize, usize),
) -> Result<FeatureGrid<T>> {
    map.validate(codebook.vocab_size())?;
    let c = codebook.dim();
    let mut grid = FeatureGrid::zeros(height, width, c);
    for r in 0..height {
        let sr = r * map.height() / height;
        for col in 0..width {
            let sc = col * map.width() / width;
            let e = codebook.entry(map.token(sr, sc));
            let start = (r * width + col) * c;
            grid.data[start..start + c].copy_from_slice(e);
        }
    }
    Ok(grid)
}

/// Sums every scale's upsampled embedding at the final resolution.
pub fn decode<T: Scalar>(
    codebook: &Codebook<T>,
    maps: &[TokenMap],
    schedule: &ScaleSchedule,
) -> Result<FeatureGrid<T>> {
    if maps.len() != schedule.len() {
        return Err(Error::param(format!(
            "decode needs {} maps, got {}",
            schedule.len(),
            maps.len()
        )));
    }
    let out = schedule.output_resolution();
    let mut grid = FeatureGrid::zeros(out.0, out.1, codebook.dim());
    for (k, m) in maps.iter().enumerate() {
        if m.resolution() != schedule.resolution(k) {
            return Err(Error::param(format!(
                "map {k} has resolution {:?}, schedule expects {:?}",
                m.resolution(),
                schedule.resolution(k)
            )));
        }
        grid.add_assign(&upsampled_contribution(codebook, m, out)?);
    }
    Ok(grid)
}

/// Where each scale's random stream comes from.
///
/// Streams are keyed by `(master, trial, scale, lane)`; `overrides` swap in a different
/// master for one scale.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamPlan {
    pub master: u64,
    pub trial: u64,
    pub overrides: Vec<(usize, u64)>,
}

impl StreamPlan {
    pub fn new(master: u64, trial: u64) -> Self {
        StreamPlan {
            master,
            trial,
            overrides: Vec::new(),
        }
    }

    pub fn with_override(mut self, scale: usize, master: u64) -> Self {
        self.overrides.push((scale, master));
        self
    }

    fn master_for(&self, scale: usize) -> u64 {
        self.overrides
            .iter()
            .rev()
            .find(|(s, _)| *s == scale)
            .map_or(self.master, |&(_, m)| m)
    }

    pub fn scale_stream(&self, scale: usize, lane: u64) -> Stream {
        rng::stream(
            self.master_for(scale),
            &[domain::SCALE, self.trial, scale as u64, lane],
        )
    }

    pub fn candidate_stream(&self, scale: usize, index: usize) -> Stream {
        rng::stream(
            self.master_for(scale),
            &[domain::CANDIDATE, self.trial, scale as u64, index as u64],
        )
    }

    pub fn selection_stream(&self) -> Stream {
        rng::stream(self.master, &[domain::SELECT, self.trial])
    }

    pub fn pick_stream(&self) -> Stream {
        rng::stream(self.master, &[domain::PICK, self.trial])
    }
}

/// The `n` candidate maps drawn at the scaled step and their embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct CandidateSet<T> {
    pub scale: usize,
    pub maps: Vec<TokenMap>,
    pub features: Vec<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ScaleRecord<T> {
    pub scale: usize,
    pub chosen: TokenMap,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Arc<CandidateSet<T>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<Arc<SelectionResult<T>>>,
    /// Index into the candidate set of the map continued by this trace.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate_index: Option<usize>,
}

/// How retained representatives are continued past the scaled step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Continuation {
    /// One trace per retained representative, sharing the prefix.
    #[default]
    Batch,
    /// A single trace continuing one density-weighted pick.
    Single,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct GenerationConfig<T> {
    pub sampling: SamplingConfig<T>,
    pub target_scale: usize,
    #[serde(default)]
    pub continuation: Continuation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct GenerationTrace<T> {
    pub master_seed: u64,
    pub trial: u64,
    pub records: Vec<ScaleRecord<T>>,
    pub decoded: FeatureGrid<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<GenerationConfig<T>>,
}

impl<T> GenerationTrace<T> {
    pub fn chosen_maps(&self) -> Vec<TokenMap> {
        self.records.iter().map(|r| r.chosen.clone()).collect()
    }
}

fn plain_record<T>(chosen: TokenMap) -> ScaleRecord<T> {
    ScaleRecord {
        scale: chosen.scale(),
        chosen,
        candidates: None,
        selection: None,
        candidate_index: None,
    }
}

/// Extends `prefix` one scale at a time through the end of the schedule.
fn continue_from<T: Scalar>(
    model: &PredictiveModel<T>,
    plan: &StreamPlan,
    prefix: &mut Vec<TokenMap>,
    records: &mut Vec<ScaleRecord<T>>,
    lane: u64,
) -> Result<()> {
    for k in prefix.len()..model.schedule.len() {
        let map = sample_scale(model, prefix, k, &mut plan.scale_stream(k, lane))?;
        prefix.push(map.clone());
        records.push(plain_record(map));
    }
    Ok(())
}

/// Ordinary generation: one draw per scale, no selection.
pub fn generate_plain<T: Scalar>(model: &PredictiveModel<T>, plan: &StreamPlan) -> Result<GenerationTrace<T>> {
    let mut prefix = Vec::with_capacity(model.schedule.len());
    let mut records = Vec::with_capacity(model.schedule.len());
    continue_from(model, plan, &mut prefix, &mut records, 0)?;
    Ok(GenerationTrace {
        master_seed: plan.master,
        trial: plan.trial,
        decoded: decode(&model.codebook, &prefix, &model.schedule)?,
        records,
        config: None,
    })
}

/// Generation with candidate selection at `config.target_scale`.
///
/// Scales before the target draw once. At the target, `n` candidates are drawn with
/// replacement, embedded and passed to the configured strategy. In batch mode every
/// retained representative is continued into its own trace; in single mode one
/// density-weighted pick is continued. Streams derive from `config.sampling.seed` and
/// `trial`.
pub fn generate<T: Scalar>(
    model: &PredictiveModel<T>,
    config: &GenerationConfig<T>,
    trial: u64,
) -> Result<Vec<GenerationTrace<T>>> {
    generate_with_plan(model, config, &StreamPlan::new(config.sampling.seed, trial))
}

pub fn generate_with_plan<T: Scalar>(
    model: &PredictiveModel<T>,
    config: &GenerationConfig<T>,
    plan: &StreamPlan,
) -> Result<Vec<GenerationTrace<T>>> {
    let target = config.target_scale;
    model.schedule.check_scale(target)?;
    config.sampling.validate()?;

    let mut prefix = Vec::with_capacity(model.schedule.len());
    let mut records: Vec<ScaleRecord<T>> = Vec::with_capacity(model.schedule.len());
    for k in 0..target {
        let map = sample_scale(model, &prefix, k, &mut plan.scale_stream(k, 0))?;
        prefix.push(map.clone());
        records.push(plain_record(map));
    }

    let n = config.sampling.n;
    let maps = (0..n)
        .map(|i| sample_scale(model, &prefix, target, &mut plan.candidate_stream(target, i)))
        .collect::<Result<Vec<_>>>()?;
    let features = maps
        .iter()
        .map(|m| model.codebook.embed(m))
        .collect::<Result<Vec<_>>>()?;
    let candidates = Arc::new(CandidateSet {
        scale: target,
        maps,
        features,
    });
    let selection = Arc::new(sampling::select(
        &candidates.features,
        &config.sampling,
        &mut plan.selection_stream(),
    )?);

    let continued: Vec<(u64, usize)> = match config.continuation {
        Continuation::Batch => selection
            .selected_indices
            .iter()
            .enumerate()
            .map(|(j, &i)| (j as u64, i))
            .collect(),
        Continuation::Single => vec![(0, sampling::weighted_pick(&selection, &mut plan.pick_stream())?)],
    };

    continued
        .into_iter()
        .map(|(lane, idx)| {
            let mut prefix = prefix.clone();
            let mut records = records.clone();
            let chosen = candidates.maps[idx].clone();
            prefix.push(chosen.clone());
            records.push(ScaleRecord {
                scale: target,
                chosen,
                candidates: Some(Arc::clone(&candidates)),
                selection: Some(Arc::clone(&selection)),
                candidate_index: Some(idx),
            });
            continue_from(model, plan, &mut prefix, &mut records, lane)?;
            Ok(GenerationTrace {
                master_seed: plan.master,
                trial: plan.trial,
                decoded: decode(&model.codebook, &prefix, &model.schedule)?,
                records,
                config: Some(config.clone()),
            })
        })
        .collect()
}

/// Per-trial divergences of the stream-substitution experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationStats {
    pub scale: usize,
    pub mean_divergence: f64,
    pub divergences: Vec<f64>,
}

/// Generates every trial twice, once with all streams from `base_seed` and once with
/// scale `k`'s stream taken from `alt_seed`, and measures how far the decoded outputs move.
pub fn perturb_scale_experiment<T: Scalar>(
    model: &PredictiveModel<T>,
    k: usize,
    base_seed: u64,
    alt_seed: u64,
    trials: usize,
) -> Result<PerturbationStats> {
    model.schedule.check_scale(k)?;
    if trials < 1 {
        return Err(Error::param("trials must be >= 1"));
    }
    let divergences = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let base = StreamPlan::new(base_seed, t);
            let alt = base.clone().with_override(k, alt_seed);
            let a = generate_plain(model, &base)?;
            let b = generate_plain(model, &alt)?;
            Ok(a.decoded.distance(&b.decoded).to_f64_lossy())
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean_divergence = divergences.iter().sum::<f64>() / trials as f64;
    Ok(PerturbationStats {
        scale: k,
        mean_divergence,
        divergences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::make_synthetic_codebook;
    use crate::sampling::Strategy;

    fn random_modes(cb_vocab: usize, schedule: &ScaleSchedule, count: usize, seed: u64) -> Vec<ScaleModes> {
        let mut r = rng::stream(seed, &[1]);
        schedule
            .resolutions()
            .iter()
            .enumerate()
            .map(|(k, &(h, w))| {
                let mut maps: Vec<TokenMap> = Vec::new();
                while maps.len() < count {
                    let m = TokenMap::new(k, h, w, (0..h * w).map(|_| r.random_range(0..cb_vocab)).collect())
                        .unwrap();
                    if !maps.contains(&m) {
                        maps.push(m);
                    }
                }
                ScaleModes {
                    maps,
                    weights: vec![1.0 / count as f64; count],
                }
            })
            .collect()
    }

    fn toy_model(smoothing: f64, noise: f64, coupling: f64) -> PredictiveModel<f64> {
        let schedule = ScaleSchedule::default();
        let cb = make_synthetic_codebook(16, 4, 1).unwrap();
        let modes = random_modes(16, &schedule, 3, 2);
        PredictiveModel::new(
            cb,
            schedule,
            modes,
            1.0,
            smoothing,
            PerScale::Uniform(noise),
            PerScale::Uniform(coupling),
        )
        .unwrap()
    }

    #[test]
    fn default_schedule_is_ten_scales() {
        let s = ScaleSchedule::default();
        assert_eq!(s.len(), 10);
        assert_eq!(s.resolution(1), (2, 2));
        assert_eq!(s.output_resolution(), (16, 16));
        assert!(ScaleSchedule::new(vec![(2, 2), (1, 1)]).is_err());
        assert!(ScaleSchedule::new(vec![]).is_err());
    }

    #[test]
    fn per_scale_parses_both_forms() {
        let a: PerScale = serde_json::from_str("0.5").unwrap();
        let b: PerScale = serde_json::from_str("[0.1, 0.2]").unwrap();
        assert_eq!(a.at(7), 0.5);
        assert_eq!(b.at(1), 0.2);
        assert!(b.check(3, "x", 0.0, 1.0).is_err());
    }

    #[test]
    fn cold_single_mode_is_deterministic() {
        let schedule = ScaleSchedule::new(vec![(1, 1), (2, 2)]).unwrap();
        let cb = make_synthetic_codebook::<f64>(8, 2, 0).unwrap();
        let modes = random_modes(8, &schedule, 1, 4);
        let target = modes[1].maps[0].clone();
        let model = PredictiveModel::new(cb, schedule, modes, 1e-6, 0.0, PerScale::Uniform(0.0), PerScale::Uniform(0.0))
            .unwrap();
        let prefix = vec![model.modes()[0].maps[0].clone()];
        for s in 0..200 {
            let m = sample_scale(&model, &prefix, 1, &mut rng::stream(s, &[])).unwrap();
            assert_eq!(m, target);
        }
    }

    #[test]
    fn two_equal_modes_drawn_equally() {
        let schedule = ScaleSchedule::new(vec![(2, 2)]).unwrap();
        let cb = make_synthetic_codebook::<f64>(8, 2, 0).unwrap();
        let mut modes = random_modes(8, &schedule, 2, 9);
        modes[0].weights = vec![0.5, 0.5];
        let smoothing = 0.01;
        let model = PredictiveModel::new(cb, schedule, modes, 1.0, smoothing, PerScale::Uniform(0.0), PerScale::Uniform(0.0))
            .unwrap();
        let mut r = rng::stream(31, &[]);
        let draws = 20_000;
        let mut counts = [0usize; 2];
        for _ in 0..draws {
            let m = sample_scale(&model, &[], 0, &mut r).unwrap();
            for g in 0..2 {
                if m == model.modes()[0].maps[g] {
                    counts[g] += 1;
                }
            }
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.5).abs() <= 0.01 * (1.0 + smoothing), "frequency {f}");
        }
    }

    #[test]
    fn sample_scale_checks_arguments() {
        let model = toy_model(0.01, 0.1, 2.0);
        let mut r = rng::stream(0, &[]);
        assert!(sample_scale(&model, &[], 10, &mut r).is_err());
        assert!(sample_scale(&model, &[], 1, &mut r).is_err());
        let a = sample_scale(&model, &[], 0, &mut rng::stream(4, &[])).unwrap();
        let b = sample_scale(&model, &[], 0, &mut rng::stream(4, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mode_probabilities_are_distributions() {
        let model = toy_model(0.01, 0.1, 3.0);
        let trace = generate_plain(&model, &StreamPlan::new(3, 0)).unwrap();
        let prefix = trace.chosen_maps();
        for k in 0..10 {
            let p = model.mode_probabilities(&prefix[..k], k).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn decode_single_scale_is_identity() {
        let cb = make_synthetic_codebook::<f64>(4, 3, 2).unwrap();
        let schedule = ScaleSchedule::new(vec![(1, 1)]).unwrap();
        let m = TokenMap::new(0, 1, 1, vec![2]).unwrap();
        let g = decode(&cb, &[m], &schedule).unwrap();
        assert_eq!(g.data(), cb.entry(2));
    }

    #[test]
    fn decode_constant_maps_sum() {
        let cb = make_synthetic_codebook::<f64>(4, 3, 2).unwrap();
        let schedule = ScaleSchedule::default();
        let maps: Vec<TokenMap> = schedule
            .resolutions()
            .iter()
            .enumerate()
            .map(|(k, &(h, w))| TokenMap::filled(k, h, w, 0).unwrap())
            .collect();
        let g = decode(&cb, &maps, &schedule).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                for (x, e) in g.cell(r, c).iter().zip(cb.entry(0)) {
                    assert!((x - 10.0 * e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn decode_matches_per_cell_recomputation() {
        let model = toy_model(0.5, 0.5, 0.0);
        let trace = generate_plain(&model, &StreamPlan::new(11, 2)).unwrap();
        let maps = trace.chosen_maps();
        let cb = model.codebook();
        let g = decode(cb, &maps, model.schedule()).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                for ch in 0..cb.dim() {
                    let mut s = 0.0;
                    for m in &maps {
                        let (h, w) = m.resolution();
                        let t = m.tokens()[(r * h / 16) * w + c * w / 16];
                        s += cb.entry(t)[ch];
                    }
                    assert!((g.cell(r, c)[ch] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn decode_is_additive_across_scales() {
        let model = toy_model(0.5, 0.5, 0.0);
        let maps = generate_plain(&model, &StreamPlan::new(5, 5)).unwrap().chosen_maps();
        let cb = model.codebook();
        let full = decode(cb, &maps, model.schedule()).unwrap();
        for k in 0..maps.len() {
            let part = upsampled_contribution(cb, &maps[k], (16, 16)).unwrap();
            let mut rest = FeatureGrid::zeros(16, 16, cb.dim());
            for (j, m) in maps.iter().enumerate() {
                if j != k {
                    rest.add_assign(&upsampled_contribution(cb, m, (16, 16)).unwrap());
                }
            }
            for ((f, p), r) in full.data().iter().zip(part.data()).zip(rest.data()) {
                assert!((f - p - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decode_rejects_mismatch() {
        let model = toy_model(0.0, 0.0, 0.0);
        let maps = generate_plain(&model, &StreamPlan::new(5, 5)).unwrap().chosen_maps();
        assert!(decode(model.codebook(), &maps[..9], model.schedule()).is_err());
        let mut swapped = maps.clone();
        swapped.swap(2, 3);
        assert!(decode(model.codebook(), &swapped, model.schedule()).is_err());
    }

    #[test]
    fn pooled_averages_blocks() {
        let mut g = FeatureGrid::<f64>::zeros(2, 2, 1);
        g.data = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(g.pooled(1), vec![2.5]);
        assert_eq!(g.pooled(2), vec![1.0, 2.0, 3.0, 4.0]);
    }

    fn gen_config(strategy: Strategy, n: usize, k: usize, target: usize) -> GenerationConfig<f64> {
        GenerationConfig {
            sampling: SamplingConfig::new(strategy, n, k, 2.3, 17),
            target_scale: target,
            continuation: Continuation::Batch,
        }
    }

    #[test]
    fn generate_batch_structure() {
        let model = toy_model(0.01, 0.1, 3.0);
        let cfg = gen_config(Strategy::DensityAdaptive, 20, 5, 1);
        let traces = generate(&model, &cfg, 0).unwrap();
        assert_eq!(traces.len(), 5);
        for t in &traces {
            assert_eq!(t.records.len(), 10);
            for (k, r) in t.records.iter().enumerate() {
                assert_eq!(r.scale, k);
                assert_eq!(r.chosen.resolution(), model.schedule().resolution(k));
            }
            let target = &t.records[1];
            let cands = target.candidates.as_ref().unwrap();
            assert_eq!(cands.maps.len(), 20);
            assert_eq!(cands.features[0].len(), 4 * model.codebook().dim());
            assert_eq!(target.chosen, cands.maps[target.candidate_index.unwrap()]);
            assert_eq!(t.decoded.data().len(), 16 * 16 * model.codebook().dim());
            // Shared prefix.
            assert_eq!(t.records[0].chosen, traces[0].records[0].chosen);
        }
        let sel = traces[0].records[1].selection.as_ref().unwrap();
        let continued: Vec<usize> = traces.iter().map(|t| t.records[1].candidate_index.unwrap()).collect();
        assert_eq!(continued, sel.selected_indices);
    }

    #[test]
    fn generate_single_continuation() {
        let model = toy_model(0.01, 0.1, 3.0);
        let mut cfg = gen_config(Strategy::TopK, 20, 5, 2);
        cfg.continuation = Continuation::Single;
        let traces = generate(&model, &cfg, 3).unwrap();
        assert_eq!(traces.len(), 1);
        let idx = traces[0].records[2].candidate_index.unwrap();
        let sel = traces[0].records[2].selection.as_ref().unwrap();
        assert!(sel.selected_indices.contains(&idx));
    }

    #[test]
    fn generate_is_deterministic_and_validates() {
        let model = toy_model(0.01, 0.1, 3.0);
        let cfg = gen_config(Strategy::RandomK, 10, 3, 4);
        assert_eq!(generate(&model, &cfg, 9).unwrap(), generate(&model, &cfg, 9).unwrap());
        assert!(generate(&model, &gen_config(Strategy::TopK, 10, 3, 10), 0).is_err());
        assert!(generate(&model, &gen_config(Strategy::TopK, 10, 11, 1), 0).is_err());
    }

    #[test]
    fn perturbation_with_same_seed_is_zero() {
        let model = toy_model(0.01, 0.1, 3.0);
        let s = perturb_scale_experiment(&model, 3, 42, 42, 20).unwrap();
        assert_eq!(s.mean_divergence, 0.0);
        assert!(perturb_scale_experiment(&model, 10, 42, 43, 1).is_err());
        assert!(perturb_scale_experiment(&model, 1, 42, 43, 0).is_err());
    }

    #[test]
    fn final_scale_perturbation_is_bounded() {
        let model = toy_model(0.2, 0.5, 0.0);
        let bound = 16.0 * model.codebook().max_spread();
        let s = perturb_scale_experiment(&model, 9, 1, 2, 50).unwrap();
        assert!(s.mean_divergence > 0.0);
        for d in s.divergences {
            assert!(d <= bound + 1e-9, "{d} > {bound}");
        }
    }

    #[test]
    fn divergence_zero_iff_perturbed_draw_unchanged() {
        // Deterministic conditionals everywhere: one mode, no noise, no smoothing.
        let schedule = ScaleSchedule::default();
        let cb = make_synthetic_codebook::<f64>(16, 4, 1).unwrap();
        let modes = random_modes(16, &schedule, 1, 2);
        let model = PredictiveModel::new(cb, schedule, modes, 1.0, 0.0, PerScale::Uniform(0.0), PerScale::Uniform(0.0))
            .unwrap();
        for k in [0, 4, 9] {
            assert_eq!(perturb_scale_experiment(&model, k, 1, 2, 10).unwrap().mean_divergence, 0.0);
        }
        // Noise only at scale 4: divergence appears exactly when that draw changes.
        let mut noise = vec![0.0; 10];
        noise[4] = 0.5;
        let model = PredictiveModel::new(
            model.codebook().clone(),
            model.schedule().clone(),
            model.modes().to_vec(),
            1.0,
            0.0,
            PerScale::Each(noise),
            PerScale::Uniform(0.0),
        )
        .unwrap();
        for t in 0..20 {
            let base = StreamPlan::new(1, t);
            let alt = base.clone().with_override(4, 2);
            let a = generate_plain(&model, &base).unwrap();
            let b = generate_plain(&model, &alt).unwrap();
            let changed = a.records[4].chosen != b.records[4].chosen;
            assert_eq!(changed, a.decoded.distance(&b.decoded) > 0.0);
            for k in (0..10).filter(|&k| k != 4) {
                assert_eq!(a.records[k].chosen, b.records[k].chosen);
            }
        }
    }
}
