//! Command-line front end.
//!
//! Every command writes a [`RunManifest`] whose `argv` replays the run. A
//! `--config` TOML file supplies defaults from its `[<command>]` table; flags
//! on the command line take precedence, and `SHRINKLEARN_SEED` overrides
//! `--seed` for everything except `replay`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use shrinklearn_core::datagen::{DatasetSpec, SeedDomain, SignalPrior};
use shrinklearn_core::spline::ConstraintSet;
use shrinklearn_core::trainer::{train, GridRangePolicy, TrainConfig};

use crate::bench::{self, Estimator, EvalSetup, SweepConfig};
use crate::dataset::{load_dataset, save_dataset, DatasetInfo};
use crate::error::{AppError, Result};
use crate::gradcheck::{self, GradcheckConfig};
use crate::manifest::{default_manifest_path, unix_ms, RunManifest};
use crate::model::ModelFile;

pub const SEED_ENV: &str = "SHRINKLEARN_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "shrinklearn",
    version,
    about = "Learn thresholding nonlinearities for unrolled ISTA"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a seeded Bernoulli-Gaussian dataset.
    #[command(args_override_self = true)]
    Datagen(DatagenArgs),
    /// Learn a spline nonlinearity on a dataset.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Score estimators on a dataset.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Monte Carlo sweep over measurement rates.
    #[command(args_override_self = true)]
    Bench(BenchArgs),
    /// Compare backpropagated gradients with finite differences.
    #[command(args_override_self = true)]
    Gradcheck(GradcheckArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// TOML file whose [<command>] table provides flag defaults.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Run manifest path [default: <output>.manifest.json].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Dataset,
    Train,
    Probe,
    Test,
}

impl From<Domain> for SeedDomain {
    fn from(d: Domain) -> Self {
        match d {
            Domain::Dataset => SeedDomain::Dataset,
            Domain::Train => SeedDomain::Train,
            Domain::Probe => SeedDomain::Probe,
            Domain::Test => SeedDomain::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    On,
    Off,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DatagenArgs {
    /// Signal length N.
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    /// Measurements M [default: round(0.7 N)].
    #[arg(long)]
    pub m: Option<usize>,
    /// Sparsity ratio ρ.
    #[arg(long, default_value_t = 0.2)]
    pub rho: f64,
    /// Measurement SNR in dB.
    #[arg(long, default_value_t = 30.0)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Seed domain the instances are drawn from.
    #[arg(long, value_enum, default_value_t = Domain::Dataset)]
    pub domain: Domain,
    /// Share one sensing matrix across all instances.
    #[arg(long)]
    pub fixed_matrix: bool,
    /// Dataset file.
    #[arg(long)]
    pub out: PathBuf,
    /// Parameter summary [default: <out>.json].
    #[arg(long)]
    pub info: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TuneArgs {
    /// Initial λ; tuned with FISTA-LASSO on the training set when absent.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Log-spaced λ candidates as LO:HI:COUNT.
    #[arg(long, default_value = "1e-4:1e-1:25")]
    pub lambda_grid: String,
    /// Training instances used for λ tuning.
    #[arg(long, default_value_t = 50)]
    pub tune_count: usize,
    /// FISTA iteration cap.
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    /// FISTA relative-change tolerance.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct LearnArgs {
    /// Unrolled depth T.
    #[arg(long, default_value_t = 200)]
    pub depth: usize,
    /// Step size μ.
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    /// Projected-gradient updates.
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    /// Grid half-width K (2K+1 basis functions).
    #[arg(long, default_value_t = 4000)]
    pub grid_k: usize,
    /// Calibrated grid radius as a multiple of the largest observed |z|.
    #[arg(long, default_value_t = 1.5)]
    pub safety_factor: f64,
    /// Fixed grid range LO:HI instead of calibration.
    #[arg(long)]
    pub grid_range: Option<String>,
    /// unconstrained, odd, or box:LO:HI.
    #[arg(long, default_value = "unconstrained")]
    pub constraint: String,
    /// Probe SNR is logged every this many updates.
    #[arg(long, default_value_t = 50)]
    pub probe_every: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    /// Training dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset for the probe learning curve.
    #[arg(long)]
    pub probe: Option<PathBuf>,
    #[command(flatten)]
    pub learn: LearnArgs,
    #[command(flatten)]
    pub tune: TuneArgs,
    /// Model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Learning curve CSV [default: <out>.curve.csv].
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Probe curve CSV [default: <out>.probe.csv].
    #[arg(long)]
    pub probe_curve: Option<PathBuf>,
    /// Learned-shape CSV.
    #[arg(long)]
    pub shape: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvalArgs {
    /// Test dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Model file (needed by learned_ista).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Comma-separated estimators.
    #[arg(long, default_value = "learned_ista,lasso,genie")]
    pub estimators: String,
    /// λ for lasso and soft_ista [default: the model's initial λ].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Depth for the unrolled estimators [default: the model's, else 200].
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Record wall time; `off` writes 0 so results are byte-reproducible.
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub timing: Toggle,
    /// Per-trial results CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Summary CSV [default: <out>.summary.csv].
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    #[arg(long, default_value_t = 0.2)]
    pub rho: f64,
    #[arg(long, default_value_t = 30.0)]
    pub snr_db: f64,
    /// Comma-separated measurement rates M/N.
    #[arg(long, default_value = "0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub rates: String,
    /// Test trials per rate.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Training instances per rate.
    #[arg(long, default_value_t = 200)]
    pub train_count: usize,
    /// Probe instances per rate.
    #[arg(long, default_value_t = 32)]
    pub probe_count: usize,
    #[arg(long, default_value = "lasso,learned_ista,genie")]
    pub estimators: String,
    #[arg(long)]
    pub fixed_matrix: bool,
    #[command(flatten)]
    pub learn: LearnArgs,
    #[command(flatten)]
    pub tune: TuneArgs,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub timing: Toggle,
    /// Per-trial results CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Summary CSV [default: <out>.summary.csv].
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    #[arg(long, default_value_t = 10)]
    pub depth: usize,
    #[arg(long, default_value_t = 20)]
    pub grid_k: usize,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Report file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(AppError::Validation(msg.into()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn parse_lambda_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let parsed = match parts.as_slice() {
        [lo, hi, count] => lo
            .parse::<f64>()
            .ok()
            .zip(hi.parse::<f64>().ok())
            .zip(count.parse::<usize>().ok()),
        _ => None,
    };
    match parsed {
        Some(((lo, hi), count)) if lo > 0.0 && hi >= lo && count >= 1 => {
            Ok(bench::log_grid(lo, hi, count))
        }
        _ => invalid(format!(
            "lambda grid '{s}' is not LO:HI:COUNT with 0 < LO <= HI"
        )),
    }
}

pub fn parse_constraint(s: &str) -> Result<ConstraintSet> {
    match s {
        "unconstrained" => Ok(ConstraintSet::Unconstrained),
        "odd" => Ok(ConstraintSet::OddSymmetric),
        _ => {
            let bounds = s.strip_prefix("box:").and_then(|r| {
                let (lo, hi) = r.split_once(':')?;
                Some((lo.parse::<f64>().ok()?, hi.parse::<f64>().ok()?))
            });
            match bounds {
                Some((lo, hi)) => Ok(ConstraintSet::Box { lo, hi }),
                None => invalid(format!(
                    "constraint '{s}' is not unconstrained, odd or box:LO:HI"
                )),
            }
        }
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|e| AppError::Validation(format!("{what} '{p}': {e}")))
        })
        .collect()
}

impl LearnArgs {
    fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let grid_range = match &self.grid_range {
            None => GridRangePolicy::Calibrated {
                safety_factor: self.safety_factor,
            },
            Some(s) => match s
                .split_once(':')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
            {
                Some((lo, hi)) => GridRangePolicy::Fixed { lo, hi },
                None => return invalid(format!("grid range '{s}' is not LO:HI")),
            },
        };
        let cfg = TrainConfig {
            depth: self.depth,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            iterations: self.iterations,
            constraint: parse_constraint(&self.constraint)?,
            grid_halfwidth: self.grid_k,
            grid_range,
            init_lambda: 0.0,
            seed,
            probe_every: self.probe_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// What a command produced.
struct Outputs {
    artifacts: Vec<PathBuf>,
    notes: Vec<String>,
}

fn cmd_datagen(a: &DatagenArgs) -> Result<Outputs> {
    if a.count == 0 {
        return invalid("count must be at least 1");
    }
    if a.n == 0 {
        return invalid("n must be at least 1");
    }
    let m = a.m.unwrap_or(((0.7 * a.n as f64).round() as usize).max(1));
    let spec = DatasetSpec {
        prior: SignalPrior::bernoulli_gaussian(a.n, a.rho)?,
        m,
        snr_db: a.snr_db,
        master_seed: a.common.seed,
        fixed_matrix: a.fixed_matrix,
    };
    let instances = spec.generate(a.domain.into(), a.count)?;
    save_dataset(&a.out, a.common.seed, &instances)?;
    let info_path = a
        .info
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out, ".json"));
    let info = DatasetInfo {
        n: a.n,
        m,
        rho: a.rho,
        snr_db: a.snr_db,
        count: a.count,
        seed: a.common.seed,
        domain: format!("{:?}", a.domain).to_lowercase(),
        fixed_matrix: a.fixed_matrix,
    };
    write(
        &info_path,
        &(serde_json::to_string_pretty(&info).expect("info serializes") + "\n"),
    )?;
    eprintln!(
        "wrote {} instances (N={}, M={m}) to {}",
        a.count,
        a.n,
        a.out.display()
    );
    Ok(Outputs {
        artifacts: vec![a.out.clone(), info_path],
        notes: vec![],
    })
}

fn cmd_train(a: &TrainArgs) -> Result<Outputs> {
    let mut cfg = a.learn.train_config(a.common.seed)?;
    let data = load_dataset(&a.data)?;
    let train_ex = bench::examples(&data.instances)?;
    let probe = match &a.probe {
        Some(p) => {
            let d = load_dataset(p)?;
            if d.n() != data.n() || d.m() != data.m() {
                return invalid("probe and training datasets differ in N or M");
            }
            bench::examples(&d.instances)?
        }
        None => Vec::new(),
    };
    let lambda = match a.tune.lambda {
        Some(l) if l >= 0.0 => l,
        Some(_) => return invalid("lambda must be non-negative"),
        None => {
            let grid = parse_lambda_grid(&a.tune.lambda_grid)?;
            let tune = &train_ex[..a.tune.tune_count.clamp(1, train_ex.len())];
            let l = bench::tune_lambda(tune, &grid, a.tune.max_iter, a.tune.tol)?;
            eprintln!("tuned lambda = {l}");
            l
        }
    };
    cfg.init_lambda = lambda;
    let report = train(&train_ex, &probe, &cfg)?;

    let model = ModelFile::new(&report.learned, Some(lambda), Some(cfg.depth));
    model.save(&a.out)?;
    let curve = a
        .curve
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out, ".curve.csv"));
    write(&curve, &bench::learning_curve_csv(&report))?;
    let mut artifacts = vec![a.out.clone(), curve];
    if !probe.is_empty() {
        let path = a
            .probe_curve
            .clone()
            .unwrap_or_else(|| with_suffix(&a.out, ".probe.csv"));
        write(&path, &bench::probe_curve_csv(&report))?;
        artifacts.push(path);
        let first = report.probe_snr.first().map_or(f64::NAN, |p| p.1);
        let last = report.probe_snr.last().map_or(f64::NAN, |p| p.1);
        eprintln!("probe SNR {first:.2} dB -> {last:.2} dB");
    }
    if let Some(path) = &a.shape {
        let threshold = report.initial.init_threshold().unwrap_or(0.0);
        let samples = bench::shape_samples(&report.learned, threshold, report.grid.range.1);
        write(path, &bench::shape_csv(&samples))?;
        artifacts.push(path.clone());
    }
    eprintln!("final training MSE {:e}", report.final_train_mse);
    Ok(Outputs {
        artifacts,
        notes: vec![],
    })
}

fn write_tables(
    records: &[bench::TrialRecord],
    timing: Toggle,
    out: &Path,
    summary: &Option<PathBuf>,
) -> Result<Vec<PathBuf>> {
    write(out, &bench::results_csv(records, timing == Toggle::On))?;
    let summary_path = summary
        .clone()
        .unwrap_or_else(|| with_suffix(out, ".summary.csv"));
    let rows = bench::summarize(records);
    write(&summary_path, &bench::summary_csv(&rows))?;
    for r in &rows {
        eprintln!(
            "{:>12}  M/N={:<5} {:8.3} dB ± {:.3} ({} trials, {} perfect, {} failed)",
            r.estimator.name(),
            r.m_over_n,
            r.mean_snr_db,
            r.stderr_db,
            r.n_trials,
            r.n_perfect,
            r.n_failed
        );
    }
    Ok(vec![out.to_path_buf(), summary_path])
}

fn cmd_eval(a: &EvalArgs) -> Result<Outputs> {
    let estimators: Vec<Estimator> = parse_list(&a.estimators, "estimator")?;
    let data = load_dataset(&a.data)?;
    let model = a.model.as_deref().map(ModelFile::load).transpose()?;
    let learned = model.as_ref().map(ModelFile::nonlinearity).transpose()?;
    let setup = EvalSetup {
        learned: learned.as_ref(),
        depth: a
            .depth
            .or(model.as_ref().and_then(|m| m.depth))
            .unwrap_or(200),
        lambda: a.lambda.or(model.as_ref().and_then(|m| m.init_lambda)),
        fista_max_iter: a.max_iter,
        fista_tol: a.tol,
    };
    let records = bench::evaluate(&data.instances, &estimators, &setup, a.threads)?;
    Ok(Outputs {
        artifacts: write_tables(&records, a.timing, &a.out, &a.summary)?,
        notes: vec![],
    })
}

const GAMP_NOTE: &str =
    "gamp: not available (its algorithm is outside this project); no rows are reported for it";

fn cmd_bench(a: &BenchArgs) -> Result<Outputs> {
    let train_cfg = a.learn.train_config(a.common.seed)?;
    let cfg = SweepConfig {
        n: a.n,
        rho: a.rho,
        snr_db: a.snr_db,
        rates: parse_list(&a.rates, "rate")?,
        trials: a.trials,
        train_count: a.train_count,
        probe_count: a.probe_count,
        tune_count: a.tune.tune_count,
        lambda_grid: parse_lambda_grid(&a.tune.lambda_grid)?,
        fista_max_iter: a.tune.max_iter,
        fista_tol: a.tune.tol,
        estimators: parse_list(&a.estimators, "estimator")?,
        fixed_matrix: a.fixed_matrix,
        seed: a.common.seed,
        threads: a.threads,
        train: train_cfg,
    };
    if a.tune.lambda.is_some() {
        return invalid("bench tunes lambda per rate; --lambda is not accepted");
    }
    eprintln!("{GAMP_NOTE}");
    let result = bench::run_sweep(&cfg)?;
    let mut notes = vec![GAMP_NOTE.to_string()];
    for r in &result.rates {
        if let Some(l) = r.lambda {
            notes.push(format!("M/N = {}: M = {}, tuned lambda = {l}", r.rate, r.m));
        }
    }
    Ok(Outputs {
        artifacts: write_tables(&result.records, a.timing, &a.out, &a.summary)?,
        notes,
    })
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<Outputs> {
    let cfg = GradcheckConfig {
        n: a.n,
        m: a.m,
        depth: a.depth,
        grid_halfwidth: a.grid_k,
        instances: a.instances,
        step: a.step,
        seed: a.common.seed,
        ..GradcheckConfig::default()
    };
    if cfg.instances == 0 || cfg.depth == 0 || cfg.step.is_nan() || cfg.step <= 0.0 {
        return invalid("instances and depth must be at least 1 and the step positive");
    }
    let report = gradcheck::run(&cfg)?;
    let pass = report.max_rel_err <= a.tolerance;
    let line = format!(
        "max_rel_err {:e} {} (tolerance {:e}, {} instances)",
        report.max_rel_err,
        if pass { "PASS" } else { "FAIL" },
        a.tolerance,
        cfg.instances
    );
    println!("{line}");
    let mut artifacts = Vec::new();
    if let Some(path) = &a.out {
        write(path, &(line.clone() + "\n"))?;
        artifacts.push(path.clone());
    }
    if !pass {
        return Err(AppError::Numerical(format!(
            "gradient check failed: {line}"
        )));
    }
    Ok(Outputs {
        artifacts,
        notes: vec![],
    })
}

/// Folds `--config FILE` into the argument list: values from the file's
/// `[<command>]` table are inserted ahead of the explicit flags, which
/// therefore win.
pub fn expand_config(argv: &[String]) -> Result<Vec<String>> {
    let Some(command) = argv.get(1).filter(|c| !c.starts_with('-')) else {
        return Ok(argv.to_vec());
    };
    let mut rest = Vec::new();
    let mut config = None;
    let mut it = argv[2..].iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            match it.next() {
                Some(p) => config = Some(PathBuf::from(p)),
                None => return invalid("--config needs a file"),
            }
        } else if let Some(p) = arg.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(arg.clone());
        }
    }
    let mut out = vec![argv[0].clone(), command.clone()];
    if let Some(path) = config {
        let text = fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| AppError::Validation(format!("{}: {e}", path.display())))?;
        if let Some(section) = table.get(command) {
            let Some(section) = section.as_table() else {
                return invalid(format!("{}: [{command}] must be a table", path.display()));
            };
            for (key, value) in section {
                let flag = format!("--{}", key.replace('_', "-"));
                let text = match value {
                    toml::Value::Boolean(true) => {
                        out.push(flag);
                        continue;
                    }
                    toml::Value::Boolean(false) => continue,
                    toml::Value::String(s) => s.clone(),
                    toml::Value::Integer(i) => i.to_string(),
                    toml::Value::Float(f) => f.to_string(),
                    toml::Value::Array(items) => items
                        .iter()
                        .map(|v| match v {
                            toml::Value::String(s) => s.clone(),
                            other => other.to_string(),
                        })
                        .collect::<Vec<_>>()
                        .join(","),
                    _ => {
                        return invalid(format!(
                            "{}: unsupported value for '{key}'",
                            path.display()
                        ))
                    }
                };
                out.push(flag);
                out.push(text);
            }
        }
    }
    out.extend(rest);
    Ok(out)
}

fn common_mut(cmd: &mut Command) -> Option<&mut Common> {
    match cmd {
        Command::Datagen(a) => Some(&mut a.common),
        Command::Train(a) => Some(&mut a.common),
        Command::Eval(a) => Some(&mut a.common),
        Command::Bench(a) => Some(&mut a.common),
        Command::Gradcheck(a) => Some(&mut a.common),
        Command::Replay(_) => None,
    }
}

/// Parses and runs one command line. `env_seed` is the value of
/// `SHRINKLEARN_SEED`, if any.
pub fn run(argv: &[String], env_seed: Option<&str>) -> Result<()> {
    let expanded = expand_config(argv)?;
    let mut cli = match Cli::try_parse_from(&expanded) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(AppError::Usage(e.to_string())),
    };
    if let Command::Replay(r) = &cli.command {
        return replay(&r.manifest);
    }
    let common = common_mut(&mut cli.command).expect("non-replay command");
    if let Some(s) = env_seed {
        common.seed = s.trim().parse().map_err(|_| {
            AppError::Validation(format!("{SEED_ENV}='{s}' is not an unsigned integer"))
        })?;
    }
    let seed = common.seed;
    // resolved up front so the recorded config matches what a replay passes
    let primary = match &cli.command {
        Command::Datagen(a) => Some(a.out.clone()),
        Command::Train(a) => Some(a.out.clone()),
        Command::Eval(a) => Some(a.out.clone()),
        Command::Bench(a) => Some(a.out.clone()),
        Command::Gradcheck(a) => a.out.clone(),
        Command::Replay(_) => unreachable!(),
    };
    let common = common_mut(&mut cli.command).expect("non-replay command");
    if common.manifest.is_none() {
        common.manifest = primary.map(|p| default_manifest_path(&p));
    }
    let manifest_path = common.manifest.clone();
    let started = unix_ms();
    let (name, config, outputs) = match &cli.command {
        Command::Datagen(a) => ("datagen", to_json(a), cmd_datagen(a)?),
        Command::Train(a) => ("train", to_json(a), cmd_train(a)?),
        Command::Eval(a) => ("eval", to_json(a), cmd_eval(a)?),
        Command::Bench(a) => ("bench", to_json(a), cmd_bench(a)?),
        Command::Gradcheck(a) => ("gradcheck", to_json(a), cmd_gradcheck(a)?),
        Command::Replay(_) => unreachable!(),
    };
    let Some(manifest_path) = manifest_path else {
        return Ok(());
    };
    let mut effective = without_flags(&expanded[1..], &["--seed", "--manifest"]);
    effective.extend([
        "--seed".into(),
        seed.to_string(),
        "--manifest".into(),
        manifest_path.display().to_string(),
    ]);
    let manifest = RunManifest {
        tool: "shrinklearn".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: name.into(),
        argv: effective,
        cwd: std::env::current_dir().unwrap_or_default(),
        config,
        master_seed: seed,
        artifacts: outputs.artifacts,
        notes: outputs.notes,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
    };
    manifest.save(&manifest_path)
}

/// `args` minus every occurrence of the given value-taking flags, in either
/// `--flag value` or `--flag=value` form.
fn without_flags(args: &[String], flags: &[&str]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if flags.contains(&a.as_str()) {
            it.next();
        } else if !flags
            .iter()
            .any(|f| a.strip_prefix(f).is_some_and(|r| r.starts_with('=')))
        {
            out.push(a.clone());
        }
    }
    out
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("arguments serialize")
}

/// Re-runs a recorded command from its working directory, ignoring
/// `SHRINKLEARN_SEED` since the manifest already pins the seed.
pub fn replay(path: &Path) -> Result<()> {
    let manifest = RunManifest::load(path)?;
    if manifest.tool != "shrinklearn" || manifest.argv.first().is_none_or(|c| c == "replay") {
        return invalid(format!("{}: not a replayable manifest", path.display()));
    }
    std::env::set_current_dir(&manifest.cwd).map_err(|e| AppError::io(&manifest.cwd, e))?;
    let mut argv = vec!["shrinklearn".to_string()];
    argv.extend(manifest.argv);
    run(&argv, None)
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let env_seed = std::env::var(SEED_ENV).ok();
    match run(&argv, env_seed.as_deref()) {
        Ok(()) => 0,
        Err(AppError::Usage(msg)) => {
            eprint!("{msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn lambda_grid_and_constraint_parsing() {
        assert_eq!(parse_lambda_grid("0.1:0.1:1").unwrap(), vec![0.1]);
        assert_eq!(parse_lambda_grid("1e-4:1e-1:25").unwrap().len(), 25);
        assert!(parse_lambda_grid("0:1:3").is_err());
        assert!(parse_lambda_grid("1:2").is_err());
        assert_eq!(
            parse_constraint("odd").unwrap(),
            ConstraintSet::OddSymmetric
        );
        assert_eq!(
            parse_constraint("box:-1:2.5").unwrap(),
            ConstraintSet::Box { lo: -1.0, hi: 2.5 }
        );
        assert!(parse_constraint("box:1").is_err());
    }

    #[test]
    fn config_values_precede_explicit_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(
            &cfg,
            "[datagen]\ncount = 7\nrho = 0.3\nfixed_matrix = true\n[train]\ndepth = 3\n",
        )
        .unwrap();
        let argv = args(&format!(
            "sl datagen --count 9 --config {} --out x",
            cfg.display()
        ));
        let out = expand_config(&argv).unwrap();
        assert_eq!(out[..2], ["sl", "datagen"]);
        assert!(!out.iter().any(|a| a.contains("depth") || a == "--config"));
        let cli = Cli::try_parse_from(&out).unwrap();
        let Command::Datagen(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.count, 9);
        assert_eq!(a.rho, 0.3);
        assert!(a.fixed_matrix);
    }

    #[test]
    fn defaults_follow_the_reference_setup() {
        let cli = Cli::try_parse_from(args("sl train --data d --out m")).unwrap();
        let Command::Train(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.learn.depth, 200);
        assert_eq!(a.learn.learning_rate, 1e-4);
        assert_eq!(a.learn.iterations, 1000);
        assert_eq!(a.learn.grid_k, 4000);
        assert_eq!(a.tune.tol, 1e-4);
        assert_eq!(a.tune.max_iter, 1000);
        let cli = Cli::try_parse_from(args("sl datagen --out d")).unwrap();
        let Command::Datagen(a) = cli.command else {
            panic!()
        };
        assert_eq!((a.n, a.rho, a.snr_db), (512, 0.2, 30.0));
    }

    #[test]
    fn invalid_seed_variable_is_a_validation_error() {
        let err = run(&args("sl gradcheck --instances 1"), Some("abc")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn recorded_seed_and_manifest_flags_are_not_duplicated() {
        let a = args("datagen --seed 1 --out x --manifest=m.json --seed=2 --count 3");
        assert_eq!(
            without_flags(&a, &["--seed", "--manifest"]),
            args("datagen --out x --count 3")
        );
    }
}
