//! Seeded experiment sweeps over strategies, scales, sample counts and thresholds.
//!
//! Every `(grid point, trial)` task generates with its own derived streams, so the report
//! does not depend on the number of workers. Rows are sorted by
//! `(strategy, scale, n, k, alpha, metric, rule, temperature, trial)` before emission and
//! one aggregate row per grid point follows the trial rows.
//!
//! Report columns, in order:
//!
//! `kind, strategy, scale, n, k, alpha, metric, rule, temperature, trial, seed, status,
//! trials_ok, branch_topk, frechet, frechet_sd, fidelity, fidelity_sd, coverage,
//! coverage_sd, fallback_warnings`
//!
//! Wall time is kept out of the report so reruns stay byte-identical; it is written to a
//! `<out>.timing.csv` sidecar instead.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{ClassificationRule, DistanceMetric};
use crate::error::{Error, Result};
use crate::metrics::{frechet_distance, mode_coverage, mode_fidelity, FeatureSet};
use crate::pipeline::{
    generate_plain, generate_with_plan, Continuation, GenerationConfig, GenerationTrace,
    PredictiveModel, StreamPlan,
};
use crate::rng::{self, domain};
use crate::sampling::{Branch, SamplingConfig, Strategy};
use crate::scenario::Scenario;

/// Alpha values swept by default: 2.0 to 2.6 in steps of 0.1.
pub const DEFAULT_ALPHAS: [f64; 7] = [2.0, 2.1, 2.2, 2.3, 2.4, 2.5, 2.6];
pub const DEFAULT_NUM_SAMPLES: [usize; 3] = [20, 50, 100];
pub const DEFAULT_REP: usize = 10;
pub const DEFAULT_SCALE: usize = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::param(format!("unknown report format `{other}`"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub strategies: Vec<Strategy>,
    pub scales: Vec<usize>,
    pub num_samples: Vec<usize>,
    pub reps: Vec<usize>,
    pub alphas: Vec<f64>,
    /// Empty means the scenario's own temperature.
    pub temperatures: Vec<f64>,
    pub metrics: Vec<DistanceMetric>,
    pub rules: Vec<ClassificationRule>,
    pub continuation: Continuation,
    pub trials: usize,
    pub seed: u64,
    pub workers: usize,
}

impl ExperimentConfig {
    /// Defaults for every sweep axis over the given scenario.
    pub fn new(scenario: Scenario) -> Self {
        ExperimentConfig {
            scenario,
            strategies: Strategy::ALL.to_vec(),
            scales: vec![DEFAULT_SCALE],
            num_samples: DEFAULT_NUM_SAMPLES.to_vec(),
            reps: vec![DEFAULT_REP],
            alphas: DEFAULT_ALPHAS.to_vec(),
            temperatures: Vec::new(),
            metrics: vec![DistanceMetric::Euclidean],
            rules: vec![ClassificationRule::Intent],
            continuation: Continuation::Batch,
            trials: 10,
            seed: 0,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let axes: [(&str, usize); 8] = [
            ("strategy", self.strategies.len()),
            ("scale", self.scales.len()),
            ("num-samples", self.num_samples.len()),
            ("rep", self.reps.len()),
            ("alpha", self.alphas.len()),
            ("metric", self.metrics.len()),
            ("rule", self.rules.len()),
            ("trials", self.trials),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, len)| *len == 0) {
            return Err(Error::param(format!("sweep axis `{name}` is empty")));
        }
        let scales = self.scenario.schedule.len();
        if let Some(s) = self.scales.iter().find(|&&s| s >= scales) {
            return Err(Error::param(format!(
                "scale {s} outside the scenario's {scales}-scale schedule"
            )));
        }
        for &n in &self.num_samples {
            for &k in &self.reps {
                if n < 1 || k < 1 || k > n {
                    return Err(Error::param(format!(
                        "need 1 <= rep <= num-samples, got rep={k} num-samples={n}"
                    )));
                }
            }
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return Err(Error::param(format!("alpha must be positive, got {a}")));
        }
        if let Some(t) = self.temperatures.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(Error::param(format!("temperature must be positive, got {t}")));
        }
        if self.workers < 1 {
            return Err(Error::param("workers must be >= 1"));
        }
        Ok(())
    }

    fn temperature_axis(&self) -> Vec<f64> {
        if self.temperatures.is_empty() {
            vec![self.scenario.temperature]
        } else {
            self.temperatures.clone()
        }
    }

    /// Every grid point, in sweep order.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &strategy in &self.strategies {
            for &scale in &self.scales {
                for &n in &self.num_samples {
                    for &k in &self.reps {
                        for &alpha in &self.alphas {
                            for &metric in &self.metrics {
                                for &rule in &self.rules {
                                    for temperature in self.temperature_axis() {
                                        out.push(GridPoint {
                                            strategy,
                                            scale,
                                            n,
                                            k,
                                            alpha,
                                            metric,
                                            rule,
                                            temperature,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub strategy: Strategy,
    pub scale: usize,
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub metric: DistanceMetric,
    pub rule: ClassificationRule,
    pub temperature: f64,
}

impl GridPoint {
    fn cmp_key(&self, other: &GridPoint) -> Ordering {
        self.strategy
            .cmp(&other.strategy)
            .then(self.scale.cmp(&other.scale))
            .then(self.n.cmp(&other.n))
            .then(self.k.cmp(&other.k))
            .then(self.alpha.total_cmp(&other.alpha))
            .then((self.metric as u8).cmp(&(other.metric as u8)))
            .then((self.rule as u8).cmp(&(other.rule as u8)))
            .then(self.temperature.total_cmp(&other.temperature))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Trial,
    Aggregate,
}

/// One report line. Trial rows leave the `_sd` columns empty; aggregate rows leave
/// `trial` and `seed` empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: RowKind,
    pub strategy: Strategy,
    pub scale: usize,
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub metric: DistanceMetric,
    pub rule: ClassificationRule,
    pub temperature: f64,
    pub trial: Option<usize>,
    pub seed: Option<u64>,
    pub status: String,
    pub trials_ok: usize,
    /// Fraction of selections that took the top-k branch; empty for non-branching strategies.
    pub branch_topk: Option<f64>,
    pub frechet: Option<f64>,
    pub frechet_sd: Option<f64>,
    pub fidelity: Option<f64>,
    pub fidelity_sd: Option<f64>,
    pub coverage: Option<f64>,
    pub coverage_sd: Option<f64>,
    pub fallback_warnings: usize,
}

impl ReportRow {
    fn point(&self) -> GridPoint {
        GridPoint {
            strategy: self.strategy,
            scale: self.scale,
            n: self.n,
            k: self.k,
            alpha: self.alpha,
            metric: self.metric,
            rule: self.rule,
            temperature: self.temperature,
        }
    }

    fn blank(kind: RowKind, p: &GridPoint) -> Self {
        ReportRow {
            kind,
            strategy: p.strategy,
            scale: p.scale,
            n: p.n,
            k: p.k,
            alpha: p.alpha,
            metric: p.metric,
            rule: p.rule,
            temperature: p.temperature,
            trial: None,
            seed: None,
            status: String::new(),
            trials_ok: 0,
            branch_topk: None,
            frechet: None,
            frechet_sd: None,
            fidelity: None,
            fidelity_sd: None,
            coverage: None,
            coverage_sd: None,
            fallback_warnings: 0,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridTiming {
    pub point: GridPoint,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<ReportRow>,
    pub timings: Vec<GridTiming>,
    /// Trial-0 traces of every grid point, for debugging dumps.
    pub sample_traces: Vec<(GridPoint, Vec<GenerationTrace<f64>>)>,
}

impl Report {
    pub fn all_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().chain(&self.aggregates)
    }

    pub fn aggregate_for(&self, pred: impl Fn(&GridPoint) -> bool) -> Vec<&ReportRow> {
        self.aggregates.iter().filter(|r| pred(&r.point())).collect()
    }

    pub fn write<W: Write>(&self, format: ReportFormat, out: W) -> Result<()> {
        match format {
            ReportFormat::Csv => {
                let mut w = csv::Writer::from_writer(out);
                for row in self.all_rows() {
                    w.serialize(row).map_err(csv_error)?;
                }
                w.flush()?;
            }
            ReportFormat::Json => {
                let rows: Vec<&ReportRow> = self.all_rows().collect();
                let mut out = out;
                serde_json::to_writer_pretty(&mut out, &rows)?;
                writeln!(out)?;
            }
        }
        Ok(())
    }

    pub fn to_string(&self, format: ReportFormat) -> Result<String> {
        let mut buf = Vec::new();
        self.write(format, &mut buf)?;
        Ok(String::from_utf8(buf).expect("report is utf-8"))
    }

    pub fn write_timings<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "strategy", "scale", "n", "k", "alpha", "metric", "rule", "temperature", "wall_time_ms",
        ])
        .map_err(csv_error)?;
        for t in &self.timings {
            let p = &t.point;
            w.write_record([
                p.strategy.to_string(),
                p.scale.to_string(),
                p.n.to_string(),
                p.k.to_string(),
                p.alpha.to_string(),
                p.metric.to_string(),
                p.rule.to_string(),
                p.temperature.to_string(),
                format!("{:.3}", t.wall_time_ms),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Numerical(format!("csv serialization failed: {other:?}")),
    }
}

/// Everything the metrics need that depends only on the scenario and temperature.
pub struct EvaluationContext {
    pub model: PredictiveModel<f64>,
    pub mode_outputs: Vec<Vec<f64>>,
    pub coverage_radius: f64,
    pub reference: FeatureSet<f64>,
    pub pool: usize,
}

impl EvaluationContext {
    pub fn new(scenario: &Scenario, temperature: f64, master_seed: u64) -> Result<Self> {
        let model = scenario.build_model::<f64>()?.with_temperature(temperature)?;
        let mode_outputs = model.mode_outputs()?;
        let coverage_radius = match scenario.coverage_radius {
            Some(r) if r > 0.0 => r,
            Some(r) => return Err(Error::param(format!("coverage_radius must be positive, got {r}"))),
            None => default_radius(&mode_outputs),
        };
        let pool = scenario.frechet_pool;
        let ref_seed = rng::derive_seed(master_seed, &[domain::REFERENCE]);
        let count = scenario.reference_samples.max(2);
        let reference = (0..count as u64)
            .into_par_iter()
            .map(|i| Ok(generate_plain(&model, &StreamPlan::new(ref_seed, i))?.decoded.pooled(pool)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EvaluationContext {
            model,
            mode_outputs,
            coverage_radius,
            reference: FeatureSet::new(reference)?,
            pool,
        })
    }

    /// Fidelity, coverage and Fréchet distance of one trial's outputs.
    pub fn evaluate(&self, traces: &[GenerationTrace<f64>]) -> Result<(f64, f64, f64)> {
        let full = FeatureSet::new(traces.iter().map(|t| t.decoded.data().to_vec()).collect())?;
        let fidelity = mode_fidelity(&full, &self.mode_outputs)?;
        let coverage = mode_coverage(&full, &self.mode_outputs, self.coverage_radius)?;
        let pooled = FeatureSet::new(traces.iter().map(|t| t.decoded.pooled(self.pool)).collect())?;
        let frechet = frechet_distance(&pooled, &self.reference)?;
        Ok((frechet, fidelity, coverage))
    }
}

fn default_radius(modes: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in modes.iter().enumerate() {
        for b in &modes[i + 1..] {
            let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            best = best.min(d);
        }
    }
    if best.is_finite() && best > 0.0 {
        best / 2.0
    } else {
        // A single mode: any output within the mode's own norm counts.
        modes
            .first()
            .map(|m| m.iter().map(|x| x * x).sum::<f64>().sqrt())
            .filter(|r| *r > 0.0)
            .unwrap_or(1.0)
    }
}

/// Seed of trial `t`, shared by every grid point so strategies see the same candidates.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    rng::derive_seed(master, &[domain::TRIAL, trial as u64])
}

struct TaskOutput {
    row: ReportRow,
    elapsed_ms: f64,
    traces: Option<Vec<GenerationTrace<f64>>>,
}

fn run_task(ctx: &EvaluationContext, p: &GridPoint, trial: usize, cfg: &ExperimentConfig, keep: bool) -> TaskOutput {
    let start = Instant::now();
    let seed = trial_seed(cfg.seed, trial);
    let gen = GenerationConfig {
        sampling: SamplingConfig::new(p.strategy, p.n, p.k, p.alpha, seed)
            .with_rule(p.rule)
            .with_metric(p.metric),
        target_scale: p.scale,
        continuation: cfg.continuation,
    };
    let mut row = ReportRow::blank(RowKind::Trial, p);
    row.trial = Some(trial);
    row.seed = Some(seed);
    let mut traces_out = None;
    match generate_with_plan(&ctx.model, &gen, &StreamPlan::new(seed, trial as u64)) {
        Ok(traces) => {
            if let Some(sel) = traces
                .first()
                .and_then(|t| t.records.get(p.scale))
                .and_then(|r| r.selection.as_ref())
            {
                row.fallback_warnings = sel.report.distance_fallbacks;
                row.branch_topk = match sel.branch_taken {
                    Branch::TopK => Some(1.0),
                    Branch::RandomK => Some(0.0),
                    Branch::NotApplicable => None,
                };
            }
            match ctx.evaluate(&traces) {
                Ok((frechet, fidelity, coverage)) => {
                    row.status = "ok".into();
                    row.trials_ok = 1;
                    row.frechet = Some(frechet);
                    row.fidelity = Some(fidelity);
                    row.coverage = Some(coverage);
                }
                Err(e) => row.status = format!("failed: {e}"),
            }
            if keep {
                traces_out = Some(traces);
            }
        }
        Err(e) => row.status = format!("failed: {e}"),
    }
    TaskOutput {
        row,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        traces: traces_out,
    }
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(sd))
}

fn aggregate(point: &GridPoint, rows: &[&ReportRow]) -> ReportRow {
    let mut agg = ReportRow::blank(RowKind::Aggregate, point);
    let ok: Vec<&&ReportRow> = rows.iter().filter(|r| r.is_ok()).collect();
    agg.trials_ok = ok.len();
    let failed = rows.len() - ok.len();
    agg.status = if failed == 0 {
        "ok".into()
    } else {
        format!("partial: {failed} of {} trials failed", rows.len())
    };
    let col = |f: fn(&ReportRow) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
    (agg.frechet, agg.frechet_sd) = mean_sd(&col(|r| r.frechet));
    (agg.fidelity, agg.fidelity_sd) = mean_sd(&col(|r| r.fidelity));
    (agg.coverage, agg.coverage_sd) = mean_sd(&col(|r| r.coverage));
    agg.branch_topk = mean_sd(&col(|r| r.branch_topk)).0;
    agg.fallback_warnings = rows.iter().map(|r| r.fallback_warnings).sum();
    agg
}

/// Runs the full sweep. Output is a deterministic function of the config, whatever
/// `workers` is.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    run_experiment_with(cfg, false)
}

/// Like [`run_experiment`], optionally keeping each grid point's trial-0 traces.
pub fn run_experiment_with(cfg: &ExperimentConfig, keep_traces: bool) -> Result<Report> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        let contexts = cfg
            .temperature_axis()
            .into_iter()
            .map(|t| Ok((t, EvaluationContext::new(&cfg.scenario, t, cfg.seed)?)))
            .collect::<Result<Vec<_>>>()?;
        let ctx_for = |t: f64| {
            &contexts
                .iter()
                .find(|(temp, _)| temp.to_bits() == t.to_bits())
                .expect("context for every temperature")
                .1
        };

        let grid = cfg.grid();
        let tasks: Vec<(usize, usize)> = (0..grid.len())
            .flat_map(|g| (0..cfg.trials).map(move |t| (g, t)))
            .collect();
        let outputs: Vec<TaskOutput> = tasks
            .par_iter()
            .map(|&(g, t)| {
                let p = &grid[g];
                run_task(ctx_for(p.temperature), p, t, cfg, keep_traces && t == 0)
            })
            .collect();

        let mut timings: Vec<GridTiming> = grid
            .iter()
            .map(|p| GridTiming {
                point: *p,
                wall_time_ms: 0.0,
            })
            .collect();
        let mut sample_traces = Vec::new();
        let mut rows = Vec::with_capacity(outputs.len());
        for ((g, _), out) in tasks.iter().zip(outputs) {
            timings[*g].wall_time_ms += out.elapsed_ms;
            if let Some(tr) = out.traces {
                sample_traces.push((grid[*g], tr));
            }
            rows.push(out.row);
        }
        rows.sort_by(|a, b| a.point().cmp_key(&b.point()).then(a.trial.cmp(&b.trial)));
        let mut sorted_grid = grid.clone();
        sorted_grid.sort_by(GridPoint::cmp_key);
        let aggregates = sorted_grid
            .iter()
            .map(|p| {
                let mine: Vec<&ReportRow> = rows
                    .iter()
                    .filter(|r| r.point().cmp_key(p) == Ordering::Equal)
                    .collect();
                aggregate(p, &mine)
            })
            .collect();
        Ok(Report {
            rows,
            aggregates,
            timings,
            sample_traces,
        })
    })
}

/// Path of the timing sidecar for a report written to `out`.
pub fn timing_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".timing.csv");
    out.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_scenario() -> Scenario {
        Scenario::from_json_str(
            r#"{
                "codebook": {"V": 8, "C": 2, "seed": 1},
                "schedule": [[1,1],[2,2],[4,4]],
                "modes": {"count": 2, "weights": [0.6, 0.4], "seed": 4},
                "token_noise": 0.1,
                "coupling": 3.0,
                "reference_samples": 50
            }"#,
            "inline",
        )
        .unwrap()
    }

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(small_scenario());
        cfg.num_samples = vec![8];
        cfg.reps = vec![3];
        cfg.alphas = vec![2.3];
        cfg.trials = 2;
        cfg
    }

    #[test]
    fn minimal_grid_has_one_row_and_one_aggregate() {
        let mut cfg = small_config();
        cfg.strategies = vec![Strategy::DensityAdaptive];
        cfg.trials = 1;
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.aggregates.len(), 1);
        assert!(r.rows[0].is_ok(), "{}", r.rows[0].status);
        assert!(r.rows[0].branch_topk.is_some());
        assert_eq!(r.aggregates[0].frechet_sd, Some(0.0));
    }

    #[test]
    fn grid_size_is_axis_product() {
        let mut cfg = small_config();
        cfg.alphas = vec![2.0, 2.5];
        cfg.num_samples = vec![8, 12];
        assert_eq!(cfg.grid().len(), 4 * 2 * 2);
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.aggregates.len(), 16);
        assert_eq!(r.rows.len(), 32);
    }

    #[test]
    fn rows_are_sorted() {
        let r = run_experiment(&small_config()).unwrap();
        let keys: Vec<(Strategy, usize)> = r.rows.iter().map(|x| (x.strategy, x.trial.unwrap())).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = small_config();
        cfg.reps = vec![9];
        assert!(run_experiment(&cfg).is_err());
        let mut cfg = small_config();
        cfg.scales = vec![3];
        assert!(run_experiment(&cfg).is_err());
        let mut cfg = small_config();
        cfg.alphas = vec![-1.0];
        assert!(run_experiment(&cfg).is_err());
        let mut cfg = small_config();
        cfg.strategies.clear();
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn single_output_trials_fail_frechet_but_run_continues() {
        let mut cfg = small_config();
        cfg.continuation = Continuation::Single;
        let r = run_experiment(&cfg).unwrap();
        assert!(r.rows.iter().all(|row| row.status.starts_with("failed")));
        assert_eq!(r.rows.len(), 8);
        assert!(r.aggregates.iter().all(|a| a.status.starts_with("partial")));
    }

    #[test]
    fn csv_and_json_share_columns() {
        let r = run_experiment(&small_config()).unwrap();
        let csv = r.to_string(ReportFormat::Csv).unwrap();
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "kind,strategy,scale,n,k,alpha,metric,rule,temperature,trial,seed,status,trials_ok,\
             branch_topk,frechet,frechet_sd,fidelity,fidelity_sd,coverage,coverage_sd,fallback_warnings"
        );
        let json: serde_json::Value = serde_json::from_str(&r.to_string(ReportFormat::Json).unwrap()).unwrap();
        let first = json.as_array().unwrap()[0].as_object().unwrap();
        let keys: Vec<&str> = first.keys().map(String::as_str).collect();
        assert!(keys.contains(&"frechet") && keys.contains(&"fidelity") && keys.contains(&"coverage"));
        let mut timing = Vec::new();
        r.write_timings(&mut timing).unwrap();
        assert_eq!(String::from_utf8(timing).unwrap().lines().count(), 1 + 4);
    }

    #[test]
    fn timing_sidecar_name() {
        assert_eq!(timing_path(Path::new("/tmp/r.csv")), PathBuf::from("/tmp/r.csv.timing.csv"));
    }
}
