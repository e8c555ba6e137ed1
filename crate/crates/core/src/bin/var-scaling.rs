use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use var_scaling::harness::{self, ExperimentConfig, ReportFormat};
use var_scaling::pipeline::Continuation;
use var_scaling::scenario::Scenario;
use var_scaling::{ClassificationRule, DistanceMetric, Error, Strategy};

/// Sweep candidate-selection strategies over a synthetic multi-scale generator.
#[derive(Parser, Debug)]
#[command(name = "var-scaling", version)]
struct Cli {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Strategies, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "top-k,small-k,random-k,density-adaptive")]
    strategy: Vec<Strategy>,
    /// Scales at which selection is applied.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "1")]
    scale: Vec<usize>,
    /// Candidates drawn per selection.
    #[arg(long, value_delimiter = ',', default_value = "20,50,100")]
    num_samples: Vec<usize>,
    /// Candidates retained per selection.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    rep: Vec<usize>,
    /// Density threshold multipliers.
    #[arg(long, value_delimiter = ',', default_value = "2.0,2.1,2.2,2.3,2.4,2.5,2.6")]
    alpha: Vec<f64>,
    /// Sampling temperatures; defaults to the scenario's.
    #[arg(long, value_delimiter = ',')]
    temperature: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "euclidean")]
    metric: Vec<DistanceMetric>,
    /// `intent` or `paper-literal`.
    #[arg(long, value_delimiter = ',', default_value = "intent")]
    rule: Vec<ClassificationRule>,
    /// `batch` keeps every retained candidate; `single` picks one by weight.
    #[arg(long, default_value = "batch")]
    continuation: String,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Write trial-0 generation traces of every grid point as JSON.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

fn continuation(name: &str) -> Result<Continuation, Error> {
    match name {
        "batch" => Ok(Continuation::Batch),
        "single" => Ok(Continuation::Single),
        other => Err(Error::Parameter(format!("unknown continuation `{other}`"))),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let scenario = Scenario::from_path(&cli.scenario).map_err(|e| match e {
        Error::Io(io) => Error::Parameter(format!("cannot read {}: {io}", cli.scenario.display())),
        other => other,
    })?;
    let mut cfg = ExperimentConfig::new(scenario);
    cfg.strategies = cli.strategy;
    cfg.scales = cli.scale;
    cfg.num_samples = cli.num_samples;
    cfg.reps = cli.rep;
    cfg.alphas = cli.alpha;
    cfg.temperatures = cli.temperature;
    cfg.metrics = cli.metric;
    cfg.rules = cli.rule;
    cfg.continuation = continuation(&cli.continuation)?;
    cfg.trials = cli.trials;
    cfg.seed = cli.seed;
    cfg.workers = cli.workers;

    let report = harness::run_experiment_with(&cfg, cli.trace_out.is_some())?;
    match &cli.out {
        Some(path) => {
            report.write(cli.format, BufWriter::new(File::create(path)?))?;
            report.write_timings(BufWriter::new(File::create(harness::timing_path(path))?))?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            report.write(cli.format, &mut lock)?;
            lock.flush()?;
        }
    }
    if let Some(path) = &cli.trace_out {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &report.sample_traces)?;
        w.flush()?;
    }
    let failed = report.rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        log::warn!("{failed} of {} trials failed", report.rows.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Parameter(_) | Error::Config { .. } | Error::Index { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
