//! Monte Carlo evaluation: per-trial records, sweeps over measurement rates
//! and the CSV tables written from them.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use shrinklearn_core::backprop::Example;
use shrinklearn_core::baselines::{fista_lasso, genie_mmse};
use shrinklearn_core::datagen::{DatasetSpec, Instance, SeedDomain, SignalPrior};
use shrinklearn_core::ista::{ista_estimate, soft_threshold_ista, GammaPolicy, OperatorForm};
use shrinklearn_core::metrics::{snr_db, Snr};
use shrinklearn_core::spline::{soft_threshold, SplineNonlinearity};
use shrinklearn_core::trainer::{train, tune_lasso_lambda_with, TrainConfig, TrainReport};

use crate::error::{AppError, Result};

/// Fraction of failed trials per (rate, estimator) above which a run aborts.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    /// FISTA on the LASSO with the tuned `λ`.
    Lasso,
    /// Unrolled ISTA with the learned nonlinearity.
    LearnedIsta,
    /// Support-aware MMSE.
    Genie,
    /// Unrolled ISTA with the exact soft threshold at the tuned `λ`.
    SoftIsta,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Lasso,
        Estimator::LearnedIsta,
        Estimator::Genie,
        Estimator::SoftIsta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Lasso => "lasso",
            Estimator::LearnedIsta => "learned_ista",
            Estimator::Genie => "genie",
            Estimator::SoftIsta => "soft_ista",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "gamp" {
            return Err("gamp is not available: its algorithm is outside this project".into());
        }
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown estimator '{s}' (expected lasso, learned_ista, genie or soft_ista)"
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Db(f64),
    /// Estimate equal to the truth; no finite SNR.
    Perfect,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub estimator: Estimator,
    pub m_over_n: f64,
    pub trial: usize,
    pub outcome: Outcome,
    pub wall_ms: f64,
}

/// What the estimators of one evaluation share.
#[derive(Debug, Clone)]
pub struct EvalSetup<'a> {
    pub learned: Option<&'a SplineNonlinearity>,
    pub depth: usize,
    /// `λ` of the LASSO and soft-threshold baselines.
    pub lambda: Option<f64>,
    pub fista_max_iter: usize,
    pub fista_tol: f64,
}

impl EvalSetup<'_> {
    pub fn check(&self, estimators: &[Estimator]) -> Result<()> {
        for e in estimators {
            match e {
                Estimator::LearnedIsta if self.learned.is_none() => {
                    return Err(AppError::Validation(
                        "learned_ista needs a trained model".into(),
                    ))
                }
                Estimator::Lasso | Estimator::SoftIsta if self.lambda.is_none() => {
                    return Err(AppError::Validation(format!("{e} needs a lambda")))
                }
                _ => {}
            }
        }
        if self.depth == 0 {
            return Err(AppError::Validation("depth must be at least 1".into()));
        }
        Ok(())
    }
}

fn estimate(
    e: Estimator,
    inst: &Instance,
    setup: &EvalSetup,
) -> shrinklearn_core::Result<Vec<f64>> {
    let x0 = vec![0.0; inst.n()];
    let problem = || inst.to_problem(GammaPolicy::Auto, OperatorForm::Dense);
    match e {
        Estimator::Lasso => {
            let lambda = setup.lambda.expect("checked");
            Ok(fista_lasso(&problem()?, lambda, setup.fista_max_iter, setup.fista_tol)?.x_hat)
        }
        Estimator::LearnedIsta => ista_estimate(
            &problem()?,
            setup.learned.expect("checked"),
            &x0,
            setup.depth,
        ),
        Estimator::Genie => Ok(genie_mmse(inst)?.x_hat),
        Estimator::SoftIsta => {
            let lambda = setup.lambda.expect("checked");
            soft_threshold_ista(&problem()?, lambda, &x0, setup.depth, 0.0)
        }
    }
}

/// Records of every estimator on one instance, in the given estimator order.
pub fn evaluate_trial(
    inst: &Instance,
    trial: usize,
    estimators: &[Estimator],
    setup: &EvalSetup,
) -> Vec<TrialRecord> {
    let m_over_n = inst.m() as f64 / inst.n() as f64;
    estimators
        .iter()
        .map(|&e| {
            let start = Instant::now();
            let result = estimate(e, inst, setup);
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let outcome = match result.and_then(|x| snr_db(&inst.x_true, &x)) {
                Ok(Snr::Db(v)) => Outcome::Db(v),
                Ok(Snr::PerfectRecovery) => Outcome::Perfect,
                Err(err) => Outcome::Failed(err.to_string()),
            };
            TrialRecord {
                estimator: e,
                m_over_n,
                trial,
                outcome,
                wall_ms,
            }
        })
        .collect()
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    if threads == 0 {
        return Err(AppError::Validation("threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| AppError::Validation(format!("cannot start worker pool: {e}")))
}

/// Evaluates all instances on `threads` workers; records come back in
/// (trial, estimator) order regardless of scheduling.
pub fn evaluate(
    instances: &[Instance],
    estimators: &[Estimator],
    setup: &EvalSetup,
    threads: usize,
) -> Result<Vec<TrialRecord>> {
    setup.check(estimators)?;
    let per_trial: Vec<Vec<TrialRecord>> = pool(threads)?.install(|| {
        instances
            .par_iter()
            .enumerate()
            .map(|(i, inst)| evaluate_trial(inst, i, estimators, setup))
            .collect()
    });
    let records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
    check_failures(&records)?;
    Ok(records)
}

/// Aborts when more than [`MAX_FAILURE_FRACTION`] of the trials of any
/// estimator at any rate failed.
pub fn check_failures(records: &[TrialRecord]) -> Result<()> {
    for row in summarize(records) {
        let failed = row.n_failed as f64;
        if failed > MAX_FAILURE_FRACTION * row.n_total as f64 {
            let example = records
                .iter()
                .find_map(|r| match &r.outcome {
                    Outcome::Failed(msg)
                        if r.estimator == row.estimator && r.m_over_n == row.m_over_n =>
                    {
                        Some(msg.as_str())
                    }
                    _ => None,
                })
                .unwrap_or("");
            return Err(AppError::Numerical(format!(
                "{} failed on {} of {} trials at M/N = {} (first failure: {example})",
                row.estimator, row.n_failed, row.n_total, row.m_over_n
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub estimator: Estimator,
    pub m_over_n: f64,
    pub mean_snr_db: f64,
    pub stderr_db: f64,
    /// Trials with a finite SNR; these enter the mean.
    pub n_trials: usize,
    pub n_perfect: usize,
    pub n_failed: usize,
    pub n_total: usize,
}

/// Mean and standard error per (rate, estimator) in first-appearance order.
/// Perfect recoveries and failures are counted but do not enter the mean.
pub fn summarize(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, Estimator)> = Vec::new();
    for r in records {
        if !keys
            .iter()
            .any(|&(m, e)| m == r.m_over_n && e == r.estimator)
        {
            keys.push((r.m_over_n, r.estimator));
        }
    }
    keys.into_iter()
        .map(|(m_over_n, estimator)| {
            let group = || {
                records
                    .iter()
                    .filter(move |r| r.m_over_n == m_over_n && r.estimator == estimator)
            };
            let values: Vec<f64> = group()
                .filter_map(|r| match r.outcome {
                    Outcome::Db(v) => Some(v),
                    _ => None,
                })
                .collect();
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let stderr = if n > 1 {
                let var =
                    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                estimator,
                m_over_n,
                mean_snr_db: mean,
                stderr_db: stderr,
                n_trials: n,
                n_perfect: group().filter(|r| r.outcome == Outcome::Perfect).count(),
                n_failed: group()
                    .filter(|r| matches!(r.outcome, Outcome::Failed(_)))
                    .count(),
                n_total: group().count(),
            }
        })
        .collect()
}

pub fn results_csv(records: &[TrialRecord], timing: bool) -> String {
    let mut out = String::from("estimator,m_over_n,trial,snr_db,wall_ms\n");
    for r in records {
        let snr = match &r.outcome {
            Outcome::Db(v) => v.to_string(),
            Outcome::Perfect => "perfect".into(),
            Outcome::Failed(_) => "failed".into(),
        };
        let wall = if timing { r.wall_ms } else { 0.0 };
        writeln!(
            out,
            "{},{},{},{},{:.3}",
            r.estimator, r.m_over_n, r.trial, snr, wall
        )
        .unwrap();
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("estimator,m_over_n,mean_snr_db,stderr_db,n_trials\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.estimator, r.m_over_n, r.mean_snr_db, r.stderr_db, r.n_trials
        )
        .unwrap();
    }
    out
}

pub fn learning_curve_csv(report: &TrainReport) -> String {
    let mut out = String::from("iteration,train_snr_db\n");
    for (i, v) in report.snr_per_iteration.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, v).unwrap();
    }
    out
}

pub fn probe_curve_csv(report: &TrainReport) -> String {
    let mut out = String::from("iteration,probe_snr_db\n");
    for (i, v) in &report.probe_snr {
        writeln!(out, "{i},{v}").unwrap();
    }
    out
}

pub const SHAPE_POINTS: usize = 2001;

/// `(z, φ(z), soft threshold)` on a uniform grid over `[-R, R]`.
pub fn shape_samples(
    learned: &SplineNonlinearity,
    threshold: f64,
    radius: f64,
) -> Vec<(f64, f64, f64)> {
    (0..SHAPE_POINTS)
        .map(|i| {
            let z = -radius + 2.0 * radius * i as f64 / (SHAPE_POINTS - 1) as f64;
            (z, learned.eval(z), soft_threshold(z, threshold))
        })
        .collect()
}

pub fn shape_csv(samples: &[(f64, f64, f64)]) -> String {
    let mut out = String::from("z,phi,softthresh\n");
    for (z, phi, st) in samples {
        writeln!(out, "{z},{phi},{st}").unwrap();
    }
    out
}

fn instance_hash(inst: &Instance) -> u64 {
    let mut h = DefaultHasher::new();
    for v in inst.x_true.iter().chain(inst.h.as_slice()).chain(&inst.y) {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Fails if any instance of `a` also occurs in `b`.
pub fn assert_disjoint(a: &[Instance], b: &[Instance]) -> Result<()> {
    let seen: HashSet<u64> = a.iter().map(instance_hash).collect();
    if b.iter().any(|i| seen.contains(&instance_hash(i))) {
        return Err(AppError::Numerical(
            "training and test splits share an instance".into(),
        ));
    }
    Ok(())
}

/// `count` log-spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

pub fn examples(instances: &[Instance]) -> Result<Vec<Example>> {
    instances
        .iter()
        .map(|i| Ok(i.to_example(GammaPolicy::Auto, OperatorForm::Dense)?))
        .collect()
}

/// `λ` maximizing the mean FISTA-LASSO SNR over `examples`.
pub fn tune_lambda(examples: &[Example], grid: &[f64], max_iter: usize, tol: f64) -> Result<f64> {
    let choice = tune_lasso_lambda_with(examples, grid, |p, lambda| {
        Ok(fista_lasso(p, lambda, max_iter, tol)?.x_hat)
    })?;
    Ok(choice.lambda)
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub n: usize,
    pub rho: f64,
    pub snr_db: f64,
    pub rates: Vec<f64>,
    pub trials: usize,
    pub train_count: usize,
    pub probe_count: usize,
    pub tune_count: usize,
    pub lambda_grid: Vec<f64>,
    pub fista_max_iter: usize,
    pub fista_tol: f64,
    pub estimators: Vec<Estimator>,
    pub fixed_matrix: bool,
    pub seed: u64,
    pub threads: usize,
    /// Depth, step size, iterations, grid and seed of the per-rate training;
    /// `init_lambda` is replaced by the tuned `λ`.
    pub train: TrainConfig,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AppError::Validation(m.into()));
        if self.rates.is_empty()
            || self
                .rates
                .iter()
                .any(|&r| r.is_nan() || r <= 0.0 || r > 1.0)
        {
            return bad("rates must be a nonempty subset of (0, 1]");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.estimators.is_empty() {
            return bad("at least one estimator is required");
        }
        let learned = self.estimators.contains(&Estimator::LearnedIsta);
        let tuned = learned
            || self
                .estimators
                .iter()
                .any(|e| matches!(e, Estimator::Lasso | Estimator::SoftIsta));
        if tuned && (self.train_count == 0 || self.tune_count == 0 || self.lambda_grid.is_empty()) {
            return bad("lambda tuning needs training instances and a nonempty lambda grid");
        }
        if learned && self.probe_count == 0 {
            return bad("probe count must be at least 1");
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn m_for(&self, rate: f64) -> usize {
        ((rate * self.n as f64).round() as usize).max(1)
    }
}

#[derive(Debug, Clone)]
pub struct RateRun {
    pub rate: f64,
    pub m: usize,
    pub lambda: Option<f64>,
    pub report: Option<TrainReport>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub records: Vec<TrialRecord>,
    pub rates: Vec<RateRun>,
}

/// For every rate: draws disjoint train/probe/test splits, tunes the LASSO
/// `λ`, retrains the nonlinearity and scores every estimator on the test
/// split.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let prior = SignalPrior::bernoulli_gaussian(cfg.n, cfg.rho)?;
    let mut records = Vec::new();
    let mut rates = Vec::new();
    for &rate in &cfg.rates {
        let m = cfg.m_for(rate);
        let spec = DatasetSpec {
            prior,
            m,
            snr_db: cfg.snr_db,
            master_seed: cfg.seed,
            fixed_matrix: cfg.fixed_matrix,
        };
        let test = spec.generate(SeedDomain::Test, cfg.trials)?;
        let needs_lambda = cfg.estimators.iter().any(|e| {
            matches!(
                e,
                Estimator::Lasso | Estimator::SoftIsta | Estimator::LearnedIsta
            )
        });
        let (lambda, report) = if needs_lambda {
            let train_set = spec.generate(SeedDomain::Train, cfg.train_count)?;
            assert_disjoint(&train_set, &test)?;
            let train_ex = examples(&train_set)?;
            let tune = &train_ex[..cfg.tune_count.min(train_ex.len())];
            let lambda = tune_lambda(tune, &cfg.lambda_grid, cfg.fista_max_iter, cfg.fista_tol)?;
            let report = if cfg.estimators.contains(&Estimator::LearnedIsta) {
                let probe = examples(&spec.generate(SeedDomain::Probe, cfg.probe_count)?)?;
                let tc = TrainConfig {
                    init_lambda: lambda,
                    ..cfg.train.clone()
                };
                Some(train(&train_ex, &probe, &tc)?)
            } else {
                None
            };
            (Some(lambda), report)
        } else {
            (None, None)
        };
        let setup = EvalSetup {
            learned: report.as_ref().map(|r| &r.learned),
            depth: cfg.train.depth,
            lambda,
            fista_max_iter: cfg.fista_max_iter,
            fista_tol: cfg.fista_tol,
        };
        let mut rows = evaluate(&test, &cfg.estimators, &setup, cfg.threads)?;
        for r in &mut rows {
            r.m_over_n = rate;
        }
        records.extend(rows);
        rates.push(RateRun {
            rate,
            m,
            lambda,
            report,
        });
    }
    Ok(SweepResult { records, rates })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(e: Estimator, trial: usize, outcome: Outcome) -> TrialRecord {
        TrialRecord {
            estimator: e,
            m_over_n: 0.5,
            trial,
            outcome,
            wall_ms: 1.25,
        }
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert!("gamp"
            .parse::<Estimator>()
            .unwrap_err()
            .contains("not available"));
        assert!("amp".parse::<Estimator>().is_err());
    }

    #[test]
    fn summary_statistics() {
        let recs = vec![
            record(Estimator::Genie, 0, Outcome::Db(10.0)),
            record(Estimator::Genie, 1, Outcome::Db(12.0)),
            record(Estimator::Genie, 2, Outcome::Db(14.0)),
            record(Estimator::Genie, 3, Outcome::Perfect),
        ];
        let s = &summarize(&recs)[0];
        assert_eq!(s.mean_snr_db, 12.0);
        assert!((s.stderr_db - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!((s.n_trials, s.n_perfect, s.n_total), (3, 1, 4));
    }

    #[test]
    fn duplicated_trials_average_to_the_single_value() {
        let recs: Vec<_> = (0..5)
            .map(|t| record(Estimator::Lasso, t, Outcome::Db(7.5)))
            .collect();
        let s = &summarize(&recs)[0];
        assert_eq!(s.mean_snr_db, 7.5);
        assert_eq!(s.stderr_db, 0.0);
    }

    #[test]
    fn sentinels_and_timing_switch() {
        let recs = vec![
            record(Estimator::Lasso, 0, Outcome::Db(3.5)),
            record(Estimator::Lasso, 1, Outcome::Perfect),
            record(Estimator::Lasso, 2, Outcome::Failed("x".into())),
        ];
        assert_eq!(
            results_csv(&recs, true),
            "estimator,m_over_n,trial,snr_db,wall_ms\nlasso,0.5,0,3.5,1.250\nlasso,0.5,1,perfect,1.250\nlasso,0.5,2,failed,1.250\n"
        );
        assert!(results_csv(&recs, false)
            .lines()
            .skip(1)
            .all(|l| l.ends_with(",0.000")));
    }

    #[test]
    fn failure_budget() {
        let mut recs: Vec<_> = (0..10)
            .map(|t| record(Estimator::Genie, t, Outcome::Db(1.0)))
            .collect();
        recs[0].outcome = Outcome::Failed("singular".into());
        assert!(check_failures(&recs).is_ok());
        recs[1].outcome = Outcome::Failed("singular".into());
        assert!(matches!(check_failures(&recs), Err(AppError::Numerical(_))));
    }

    #[test]
    fn shape_grid_endpoints() {
        let nl = shrinklearn_core::spline::fit_soft_threshold(10, 0.5, 0.4).unwrap();
        let s = shape_samples(&nl, 0.4, 5.0);
        assert_eq!(s.len(), 2001);
        assert_eq!(s[0].0, -5.0);
        assert_eq!(s[2000].0, 5.0);
        assert_eq!(s[1000].0, 0.0);
        assert_eq!(s[1000].2, 0.0);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-4, 1e-1, 4);
        assert!((g[0] - 1e-4).abs() < 1e-18 && (g[3] - 1e-1).abs() < 1e-15);
        assert!((g[1] - 1e-3).abs() < 1e-15);
    }
}
