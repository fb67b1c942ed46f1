//! Online projected-gradient learning of the spline coefficients.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::backprop::{batch_gradient_detailed, cost, Example};
use crate::datagen::{instance_rng, SeedDomain};
use crate::error::{Error, Result};
use crate::ista::{ista_estimate, soft_threshold_ista, Problem};
use crate::linalg;
use crate::metrics::{snr_db, Snr};
use crate::spline::{fit_soft_threshold, soft_threshold, ConstraintSet, SplineNonlinearity};

/// Examples used by [`GridRangePolicy::Calibrated`].
pub const CALIBRATION_SAMPLE: usize = 32;

/// How the knot range `[−KΔ, KΔ]` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridRangePolicy {
    /// `Δ = (hi − lo)/(2K)`.
    Fixed { lo: f64, hi: f64 },
    /// `R = safety_factor · max |z^t_m|` over soft-threshold ISTA passes on
    /// the first [`CALIBRATION_SAMPLE`] examples, then `Δ = 2R/(2K)`.
    Calibrated { safety_factor: f64 },
}

impl Default for GridRangePolicy {
    fn default() -> Self {
        GridRangePolicy::Calibrated { safety_factor: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCalibration {
    pub delta: f64,
    pub range: (f64, f64),
    /// Largest pre-activation magnitude seen; zero for a fixed range.
    pub max_abs_z: f64,
}

/// Largest `|z^t_m|` over `depth` soft-threshold ISTA iterations from zero.
pub fn max_abs_preactivation(p: &Problem, lambda: f64, depth: usize) -> f64 {
    let threshold = p.gamma() * lambda;
    let mut x = vec![0.0; p.n()];
    let mut z = vec![0.0; p.n()];
    let mut peak = 0.0f64;
    for _ in 0..depth {
        p.apply_s(&x, &mut z);
        linalg::axpy(1.0, p.b(), &mut z);
        peak = peak.max(linalg::max_abs(&z));
        for (xi, &zi) in x.iter_mut().zip(&z) {
            *xi = soft_threshold(zi, threshold);
        }
    }
    peak
}

/// Grid spacing and range for `2K+1` basis functions.
pub fn calibrate_grid(
    examples: &[Example],
    grid_halfwidth: usize,
    policy: GridRangePolicy,
    lambda: f64,
    depth: usize,
) -> Result<GridCalibration> {
    if examples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if grid_halfwidth < 2 {
        return Err(Error::invalid("grid half-width K must be at least 2"));
    }
    let k = grid_halfwidth as f64;
    match policy {
        GridRangePolicy::Fixed { lo, hi } => {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid("fixed grid range needs lo < hi"));
            }
            Ok(GridCalibration {
                delta: (hi - lo) / (2.0 * k),
                range: (lo, hi),
                max_abs_z: 0.0,
            })
        }
        GridRangePolicy::Calibrated { safety_factor } => {
            if !(safety_factor > 0.0) {
                return Err(Error::invalid("safety factor must be positive"));
            }
            let peak = examples
                .iter()
                .take(CALIBRATION_SAMPLE)
                .map(|ex| max_abs_preactivation(&ex.problem, lambda, depth.max(1)))
                .fold(0.0f64, f64::max);
            if !(peak > 0.0) || !peak.is_finite() {
                return Err(Error::DegenerateRange);
            }
            let r = safety_factor * peak;
            Ok(GridCalibration {
                delta: 2.0 * r / (2.0 * k),
                range: (-r, r),
                max_abs_z: peak,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Unrolled depth `T`.
    pub depth: usize,
    /// Step `μ` of the projected gradient update.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub constraint: ConstraintSet,
    pub grid_halfwidth: usize,
    pub grid_range: GridRangePolicy,
    /// LASSO `λ` whose soft threshold `γλ` initializes `φ`.
    pub init_lambda: f64,
    pub seed: u64,
    /// Probe-set SNR is recorded every `probe_every` updates.
    pub probe_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            depth: 200,
            learning_rate: 1e-4,
            batch_size: 1,
            iterations: 1000,
            constraint: ConstraintSet::Unconstrained,
            grid_halfwidth: 200,
            grid_range: GridRangePolicy::default(),
            init_lambda: 0.0,
            seed: 0,
            probe_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::invalid("depth T must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.grid_halfwidth < 2 {
            return Err(Error::invalid("grid half-width K must be at least 2"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(
                "learning rate must be finite and non-negative",
            ));
        }
        if !(self.init_lambda >= 0.0) {
            return Err(Error::invalid("initial lambda must be non-negative"));
        }
        if self.probe_every == 0 {
            return Err(Error::invalid("probe interval must be at least 1"));
        }
        if let ConstraintSet::Box { lo, hi } = self.constraint {
            if !(lo <= hi) {
                return Err(Error::invalid("box constraint needs lo <= hi"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub learned: SplineNonlinearity,
    pub initial: SplineNonlinearity,
    pub grid: GridCalibration,
    /// Mean SNR (dB) of the batch drawn at each update, measured before the update.
    pub snr_per_iteration: Vec<f64>,
    /// Mean cost `½‖x − x^T‖²` of the same batches.
    pub cost_per_iteration: Vec<f64>,
    /// `(updates applied, mean probe SNR)`; starts at 0 and ends at `iterations`.
    pub probe_snr: Vec<(usize, f64)>,
    /// Mean cost over the whole training set after the last update.
    pub final_train_mse: f64,
}

/// Mean of finite SNR values; perfect recoveries count as `+∞`.
fn mean_snr(values: impl IntoIterator<Item = Snr>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += match v {
            Snr::Db(d) => d,
            Snr::PerfectRecovery => f64::INFINITY,
        };
        n += 1;
    }
    sum / n as f64
}

/// Mean SNR (dB) of the unrolled network with `nl` over `examples`.
pub fn mean_network_snr(
    examples: &[Example],
    nl: &SplineNonlinearity,
    depth: usize,
) -> Result<f64> {
    let mut out = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        let x0 = vec![0.0; ex.problem.n()];
        let x = ista_estimate(&ex.problem, nl, &x0, depth).map_err(|e| e.at_example(i))?;
        out.push(snr_db(&ex.x_true, &x).map_err(|e| e.at_example(i))?);
    }
    Ok(mean_snr(out))
}

/// Mean of per-problem step sizes; the shared soft threshold is `λ·γ̄`.
pub fn mean_step_size(examples: &[Example]) -> f64 {
    examples.iter().map(|e| e.problem.gamma()).sum::<f64>() / examples.len() as f64
}

/// Learns the coefficients by projected online gradient descent.
///
/// `c⁰` is the soft threshold `λ·γ̄` fitted on the calibrated grid and
/// projected onto the constraint set. Each update draws `batch_size` indices
/// uniformly with replacement from one ChaCha8 stream seeded by `cfg.seed`
/// and applies `c ← proj(c − μ ∇E(c))`.
pub fn train(examples: &[Example], probe: &[Example], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let grid = calibrate_grid(
        examples,
        cfg.grid_halfwidth,
        cfg.grid_range,
        cfg.init_lambda,
        cfg.depth,
    )?;
    let threshold = cfg.init_lambda * mean_step_size(examples);
    let mut nl = fit_soft_threshold(cfg.grid_halfwidth, grid.delta, threshold)?;
    nl.project(cfg.constraint);
    let initial = nl.clone();

    let mut rng = instance_rng(cfg.seed, SeedDomain::Run, 0);
    let mut snr_per_iteration = Vec::with_capacity(cfg.iterations);
    let mut cost_per_iteration = Vec::with_capacity(cfg.iterations);
    let mut probe_snr = Vec::new();
    let mut batch: Vec<&Example> = Vec::with_capacity(cfg.batch_size);

    for i in 1..=cfg.iterations {
        if !probe.is_empty() && (i - 1) % cfg.probe_every == 0 {
            probe_snr.push((i - 1, mean_network_snr(probe, &nl, cfg.depth)?));
        }
        batch.clear();
        for _ in 0..cfg.batch_size {
            batch.push(&examples[rng.random_range(0..examples.len())]);
        }
        let step = batch_gradient_detailed(&batch, &nl, cfg.depth).map_err(|e| {
            if matches!(e.root(), Error::NonFinite { .. }) {
                Error::Diverged {
                    iteration: i,
                    last_finite: nl.coefficients().to_vec(),
                }
            } else {
                e
            }
        })?;
        let snrs = batch
            .iter()
            .zip(&step.estimates)
            .map(|(ex, x)| snr_db(&ex.x_true, x))
            .collect::<Result<Vec<_>>>()?;
        snr_per_iteration.push(mean_snr(snrs));
        cost_per_iteration.push(step.costs.iter().sum::<f64>() / step.costs.len() as f64);

        let mut next = nl.coefficients().to_vec();
        linalg::axpy(-cfg.learning_rate, &step.gradient, &mut next);
        crate::spline::project_in_place(&mut next, cfg.constraint);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                iteration: i,
                last_finite: nl.coefficients().to_vec(),
            });
        }
        nl.set_coefficients(next)?;
    }
    if !probe.is_empty() {
        probe_snr.push((cfg.iterations, mean_network_snr(probe, &nl, cfg.depth)?));
    }

    let mut total = 0.0;
    for (i, ex) in examples.iter().enumerate() {
        let x0 = vec![0.0; ex.problem.n()];
        let x = ista_estimate(&ex.problem, &nl, &x0, cfg.depth).map_err(|e| e.at_example(i))?;
        total += cost(&ex.x_true, &x)?;
    }

    Ok(TrainReport {
        learned: nl,
        initial,
        grid,
        snr_per_iteration,
        cost_per_iteration,
        probe_snr,
        final_train_mse: total / examples.len() as f64,
    })
}

/// Winner of a λ grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaChoice {
    pub lambda: f64,
    pub mean_snr_db: f64,
    /// `(λ, mean SNR)` for every candidate, in the given order.
    pub scores: Vec<(f64, f64)>,
}

/// Candidate `λ` maximizing the mean SNR of `solve` over `examples`; ties go
/// to the smaller `λ`.
pub fn tune_lasso_lambda_with(
    examples: &[Example],
    candidates: &[f64],
    mut solve: impl FnMut(&Problem, f64) -> Result<Vec<f64>>,
) -> Result<LambdaChoice> {
    if candidates.is_empty() {
        return Err(Error::Empty("lambda candidates"));
    }
    if examples.is_empty() {
        return Err(Error::Empty("tuning set"));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for &lambda in candidates {
        let mut snrs = Vec::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            let x = solve(&ex.problem, lambda).map_err(|e| e.at_example(i))?;
            snrs.push(snr_db(&ex.x_true, &x).map_err(|e| e.at_example(i))?);
        }
        scores.push((lambda, mean_snr(snrs)));
    }
    let mut best = scores[0];
    for &(lambda, score) in &scores[1..] {
        if score > best.1 || (score == best.1 && lambda < best.0) {
            best = (lambda, score);
        }
    }
    Ok(LambdaChoice {
        lambda: best.0,
        mean_snr_db: best.1,
        scores,
    })
}

/// [`tune_lasso_lambda_with`] using plain soft-threshold ISTA.
pub fn tune_lasso_lambda(
    examples: &[Example],
    candidates: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<LambdaChoice> {
    tune_lasso_lambda_with(examples, candidates, |p, lambda| {
        soft_threshold_ista(p, lambda, &vec![0.0; p.n()], max_iter, tol)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backprop::batch_gradient;
    use crate::datagen::{DatasetSpec, SignalPrior};
    use crate::ista::{GammaPolicy, OperatorForm};
    use crate::linalg::Matrix;

    fn dataset(n: usize, m: usize, count: usize, seed: u64) -> Vec<Example> {
        let spec = DatasetSpec {
            prior: SignalPrior::bernoulli_gaussian(n, 0.2).unwrap(),
            m,
            snr_db: 30.0,
            master_seed: seed,
            fixed_matrix: false,
        };
        spec.generate(SeedDomain::Train, count)
            .unwrap()
            .iter()
            .map(|i| {
                i.to_example(GammaPolicy::Auto, OperatorForm::Dense)
                    .unwrap()
            })
            .collect()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            depth: 8,
            learning_rate: 1e-3,
            batch_size: 2,
            iterations: 5,
            grid_halfwidth: 30,
            init_lambda: 0.05,
            seed: 11,
            probe_every: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn fixed_grid_arithmetic() {
        let data = dataset(8, 4, 1, 1);
        let g = calibrate_grid(
            &data,
            200,
            GridRangePolicy::Fixed {
                lo: -10.0,
                hi: 10.0,
            },
            0.1,
            5,
        )
        .unwrap();
        assert!((g.delta - 0.05).abs() < 1e-15);
    }

    #[test]
    fn calibration_errors() {
        assert!(matches!(
            calibrate_grid(&[], 10, GridRangePolicy::default(), 0.1, 5),
            Err(Error::Empty(_))
        ));
        let zero = Example::new(
            Problem::new(Matrix::identity(4), vec![0.0; 4], GammaPolicy::Auto).unwrap(),
            vec![0.0; 4],
        )
        .unwrap();
        assert_eq!(
            calibrate_grid(&[zero], 10, GridRangePolicy::default(), 0.1, 5).unwrap_err(),
            Error::DegenerateRange
        );
    }

    #[test]
    fn calibrated_radius_matches_recompute() {
        let data = dataset(32, 16, 40, 2);
        let g = calibrate_grid(
            &data,
            50,
            GridRangePolicy::Calibrated { safety_factor: 1.5 },
            0.05,
            10,
        )
        .unwrap();
        // independent recompute over the same 32 examples with explicit ISTA loops
        let mut peak = 0.0f64;
        for ex in data.iter().take(32) {
            let p = &ex.problem;
            let mut x = vec![0.0; p.n()];
            for _ in 0..10 {
                let mut z = p.s().unwrap().matvec(&x);
                for (zi, bi) in z.iter_mut().zip(p.b()) {
                    *zi += bi;
                }
                for zi in &z {
                    peak = peak.max(zi.abs());
                }
                x = z
                    .iter()
                    .map(|&v| soft_threshold(v, p.gamma() * 0.05))
                    .collect();
            }
        }
        assert_eq!(g.range.1, 1.5 * peak);
        assert!((g.delta - 1.5 * peak / 50.0).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let data = dataset(16, 8, 6, 3);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small_cfg()
        };
        let rep = train(&data, &data[..2], &cfg).unwrap();
        assert_eq!(rep.learned, rep.initial);
        assert_eq!(rep.snr_per_iteration.len(), cfg.iterations);
        assert_eq!(rep.probe_snr.first().unwrap().0, 0);
        assert_eq!(rep.probe_snr.last().unwrap().0, cfg.iterations);
    }

    #[test]
    fn single_full_batch_step_matches_manual_update() {
        let data = dataset(16, 8, 3, 4);
        // one draw from the run stream with the full set as batch
        let cfg = TrainConfig {
            iterations: 1,
            batch_size: 1,
            ..small_cfg()
        };
        let rep = train(&data, &[], &cfg).unwrap();
        let mut rng = instance_rng(cfg.seed, SeedDomain::Run, 0);
        let idx = rng.random_range(0..data.len());
        let g = batch_gradient(&data[idx..=idx], &rep.initial, cfg.depth).unwrap();
        let expected: Vec<f64> = rep
            .initial
            .coefficients()
            .iter()
            .zip(&g)
            .map(|(c, gi)| c - cfg.learning_rate * gi)
            .collect();
        assert_eq!(rep.learned.coefficients(), expected.as_slice());
    }

    #[test]
    fn seed_determinism() {
        let data = dataset(16, 8, 6, 5);
        let a = train(&data, &data[..2], &small_cfg()).unwrap();
        let b = train(&data, &data[..2], &small_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn iterates_stay_feasible() {
        let data = dataset(16, 8, 6, 6);
        for constraint in [
            ConstraintSet::OddSymmetric,
            ConstraintSet::Box { lo: -0.5, hi: 0.5 },
        ] {
            let cfg = TrainConfig {
                constraint,
                learning_rate: 0.05,
                ..small_cfg()
            };
            let rep = train(&data, &[], &cfg).unwrap();
            let c = rep.learned.coefficients();
            match constraint {
                ConstraintSet::OddSymmetric => {
                    for i in 0..c.len() {
                        assert_eq!(c[i], -c[c.len() - 1 - i]);
                    }
                }
                ConstraintSet::Box { lo, hi } => assert!(c.iter().all(|&v| v >= lo && v <= hi)),
                ConstraintSet::Unconstrained => unreachable!(),
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let data = dataset(8, 4, 2, 7);
        for cfg in [
            TrainConfig {
                iterations: 0,
                ..small_cfg()
            },
            TrainConfig {
                grid_halfwidth: 1,
                ..small_cfg()
            },
            TrainConfig {
                batch_size: 0,
                ..small_cfg()
            },
            TrainConfig {
                learning_rate: -1.0,
                ..small_cfg()
            },
        ] {
            assert!(matches!(
                train(&data, &[], &cfg),
                Err(Error::InvalidParameter(_))
            ));
        }
        assert!(matches!(
            train(&[], &[], &small_cfg()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn huge_step_reports_divergence() {
        let data = dataset(16, 8, 4, 8);
        let cfg = TrainConfig {
            learning_rate: 1e300,
            iterations: 50,
            ..small_cfg()
        };
        match train(&data, &[], &cfg) {
            Err(Error::Diverged {
                iteration,
                last_finite,
            }) => {
                assert!(iteration >= 1);
                assert!(last_finite.iter().all(|v| v.is_finite()));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn lambda_tuning() {
        let data = dataset(16, 8, 4, 9);
        let one = tune_lasso_lambda(&data, &[0.1], 50, 1e-4).unwrap();
        assert_eq!(one.lambda, 0.1);
        assert!(tune_lasso_lambda(&data, &[], 50, 1e-4).is_err());

        let x = vec![1.0, -0.5, 0.0, 2.0];
        let exact = Example::new(
            Problem::new(Matrix::identity(4), x.clone(), GammaPolicy::Auto).unwrap(),
            x,
        )
        .unwrap();
        assert_eq!(
            tune_lasso_lambda(&[exact], &[0.0], 10, 1e-4)
                .unwrap()
                .lambda,
            0.0
        );
    }

    #[test]
    fn lambda_tuning_ties_prefer_smaller() {
        let data = dataset(16, 8, 2, 10);
        let choice =
            tune_lasso_lambda_with(&data, &[0.3, 0.1, 0.2], |p, _| Ok(vec![0.0; p.n()])).unwrap();
        assert_eq!(choice.lambda, 0.1);
    }
}
