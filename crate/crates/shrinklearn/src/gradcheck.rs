//! Finite-difference check of the backpropagated gradient on seeded
//! instances.

use rand::Rng;
use shrinklearn_core::backprop::{cost, gradient};
use shrinklearn_core::datagen::{instance_rng, DatasetSpec, SeedDomain, SignalPrior};
use shrinklearn_core::ista::{ista_estimate, ista_forward};
use shrinklearn_core::spline::{fit_soft_threshold, SplineNonlinearity};
use shrinklearn_core::trainer::{calibrate_grid, mean_step_size, GridRangePolicy};

use crate::bench::examples;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub n: usize,
    pub m: usize,
    pub depth: usize,
    pub grid_halfwidth: usize,
    pub instances: usize,
    /// `λ` of the soft threshold the coefficients start from.
    pub lambda: f64,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            n: 16,
            m: 8,
            depth: 10,
            grid_halfwidth: 20,
            instances: 20,
            lambda: 0.05,
            step: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// Per instance, in generation order.
    pub per_instance: Vec<f64>,
}

/// Coordinate-wise `|a − b| / max(|a|, |b|, 1e-3·max|a|)`. The floor sits at
/// the resolution of central differences, whose rounding noise is about
/// `ε·E/h` in absolute terms.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Backpropagation against central differences on `cfg.instances` seeded
/// instances. The coefficients are the soft-threshold fit on the calibrated
/// grid plus a seeded perturbation, so asymmetric directions are exercised.
pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let spec = DatasetSpec {
        prior: SignalPrior::bernoulli_gaussian(cfg.n, 0.2)?,
        m: cfg.m,
        snr_db: 30.0,
        master_seed: cfg.seed,
        fixed_matrix: false,
    };
    let data = examples(&spec.generate(SeedDomain::Train, cfg.instances)?)?;
    let grid = calibrate_grid(
        &data,
        cfg.grid_halfwidth,
        GridRangePolicy::default(),
        cfg.lambda,
        cfg.depth,
    )?;
    let mut nl = fit_soft_threshold(
        cfg.grid_halfwidth,
        grid.delta,
        cfg.lambda * mean_step_size(&data),
    )?;
    let mut rng = instance_rng(cfg.seed, SeedDomain::Run, 1);
    let perturbed = nl
        .coefficients()
        .iter()
        .map(|c| c + 0.05 * grid.delta * (rng.random::<f64>() - 0.5))
        .collect();
    nl.set_coefficients(perturbed)?;

    let x0 = vec![0.0; cfg.n];
    let mut per_instance = Vec::with_capacity(data.len());
    for ex in &data {
        let trace = ista_forward(&ex.problem, &nl, &x0, cfg.depth)?;
        let g = gradient(&ex.problem, &nl, &trace, &ex.x_true)?;
        let energy = |c: Vec<f64>| -> Result<f64> {
            let mut probe: SplineNonlinearity = nl.clone();
            probe.set_coefficients(c)?;
            let x = ista_estimate(&ex.problem, &probe, &x0, cfg.depth)?;
            Ok(cost(&ex.x_true, &x)?)
        };
        let mut fd = Vec::with_capacity(g.len());
        for k in 0..g.len() {
            let mut plus = nl.coefficients().to_vec();
            let mut minus = plus.clone();
            plus[k] += cfg.step;
            minus[k] -= cfg.step;
            fd.push((energy(plus)? - energy(minus)?) / (2.0 * cfg.step));
        }
        per_instance.push(max_relative_error(&g, &fd));
    }
    Ok(GradcheckReport {
        max_rel_err: per_instance.iter().cloned().fold(0.0, f64::max),
        per_instance,
    })
}
