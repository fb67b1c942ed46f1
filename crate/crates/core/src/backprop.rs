//! Reverse-mode gradient of `E(c) = ½‖x − x^T(c)‖²` through the unrolled
//! iterations.
//!
//! Starting from `r^T = x^T − x` and `g^T = 0`, each layer `t = T, …, 1`
//! performs
//!
//! ```text
//! g^{t−1} = g^t + [Ψ^t]ᵀ r^t
//! r^{t−1} = Sᵀ diag(φ′(z^t)) r^t
//! ```
//!
//! and `g^0` is the gradient, since `x^0` does not depend on `c`. Rows of
//! `Ψ^t` are regenerated from `z^t` on the fly and have at most four
//! nonzeros, so a backward pass costs about as much as a forward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::ista::{ista_forward, IterateTrace, Problem};
use crate::linalg;
use crate::spline::SplineNonlinearity;

/// A training pair: problem data and the true signal.
#[derive(Debug, Clone)]
pub struct Example {
    pub problem: Problem,
    pub x_true: Vec<f64>,
}

impl Example {
    pub fn new(problem: Problem, x_true: Vec<f64>) -> Result<Self> {
        check_len("true signal", problem.n(), x_true.len())?;
        Ok(Example { problem, x_true })
    }
}

/// `½‖x_true − x_est‖²`.
pub fn cost(x_true: &[f64], x_est: &[f64]) -> Result<f64> {
    check_len("cost", x_true.len(), x_est.len())?;
    Ok(0.5 * linalg::dist_sq(x_true, x_est))
}

/// State of the backward recursion at layer `t`.
#[derive(Debug, Clone)]
pub struct GradientWorkspace {
    /// Adjoint `r^t`.
    pub r: Vec<f64>,
    /// Accumulator `g^t`.
    pub g: Vec<f64>,
    /// Current layer.
    pub t: usize,
}

impl GradientWorkspace {
    /// Workspace at `t = T` with `r^T = residual` and `g^T = 0`.
    pub fn new(trace: &IterateTrace, nl: &SplineNonlinearity, residual: Vec<f64>) -> Self {
        GradientWorkspace {
            r: residual,
            g: vec![0.0; nl.num_coefficients()],
            t: trace.depth(),
        }
    }

    /// Processes layer `t` and moves to `t − 1`. Returns `false` once `t = 0`.
    pub fn step(&mut self, p: &Problem, nl: &SplineNonlinearity, trace: &IterateTrace) -> bool {
        if self.t == 0 {
            return false;
        }
        let z = &trace.z_history()[self.t - 1];
        for (&zm, &rm) in z.iter().zip(&self.r) {
            if rm == 0.0 {
                continue;
            }
            for (k, v) in nl.basis_row(zm).iter() {
                self.g[nl.slot(k)] += v * rm;
            }
        }
        // r^0 is never read.
        if self.t > 1 {
            let weighted: Vec<f64> = z
                .iter()
                .zip(&self.r)
                .map(|(&zm, &rm)| nl.eval_prime(zm) * rm)
                .collect();
            p.apply_s_t(&weighted, &mut self.r);
        }
        self.t -= 1;
        self.t > 0
    }
}

fn check_trace(p: &Problem, trace: &IterateTrace) -> Result<()> {
    if trace.depth() == 0 {
        return Err(Error::invalid("trace has depth 0"));
    }
    check_len("trace estimate", p.n(), trace.x_final().len())?;
    for z in trace.z_history() {
        check_len("trace pre-activation", p.n(), z.len())?;
    }
    Ok(())
}

/// `[∂x^T/∂c]ᵀ residual`.
pub fn vector_jacobian_product(
    p: &Problem,
    nl: &SplineNonlinearity,
    trace: &IterateTrace,
    residual: &[f64],
) -> Result<Vec<f64>> {
    check_trace(p, trace)?;
    check_len("residual", p.n(), residual.len())?;
    let mut ws = GradientWorkspace::new(trace, nl, residual.to_vec());
    while ws.step(p, nl, trace) {}
    if ws.g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { iteration: 0 });
    }
    Ok(ws.g)
}

/// `∇E(c)` for one example, given its forward trace.
pub fn gradient(
    p: &Problem,
    nl: &SplineNonlinearity,
    trace: &IterateTrace,
    x_true: &[f64],
) -> Result<Vec<f64>> {
    check_len("true signal", p.n(), x_true.len())?;
    check_len("trace estimate", p.n(), trace.x_final().len())?;
    let residual: Vec<f64> = trace
        .x_final()
        .iter()
        .zip(x_true)
        .map(|(a, b)| a - b)
        .collect();
    vector_jacobian_product(p, nl, trace, &residual)
}

/// Mean gradient over a batch, plus the quantities computed on the way.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub gradient: Vec<f64>,
    /// Per-example cost at the current coefficients.
    pub costs: Vec<f64>,
    /// Per-example `x^T`.
    pub estimates: Vec<Vec<f64>>,
}

/// Forward pass from `x^0 = 0` plus gradient for each example; gradients are
/// summed in list order and divided by the batch size.
pub fn batch_gradient_detailed(
    batch: &[&Example],
    nl: &SplineNonlinearity,
    depth: usize,
) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut sum = vec![0.0; nl.num_coefficients()];
    let mut costs = Vec::with_capacity(batch.len());
    let mut estimates = Vec::with_capacity(batch.len());
    for (index, ex) in batch.iter().enumerate() {
        let (g, c, x) = single(ex, nl, depth).map_err(|e| e.at_example(index))?;
        linalg::axpy(1.0, &g, &mut sum);
        costs.push(c);
        estimates.push(x);
    }
    let scale = batch.len() as f64;
    sum.iter_mut().for_each(|v| *v /= scale);
    Ok(BatchGradient {
        gradient: sum,
        costs,
        estimates,
    })
}

fn single(
    ex: &Example,
    nl: &SplineNonlinearity,
    depth: usize,
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let x0 = vec![0.0; ex.problem.n()];
    let trace = ista_forward(&ex.problem, nl, &x0, depth)?;
    let g = gradient(&ex.problem, nl, &trace, &ex.x_true)?;
    let c = cost(&ex.x_true, trace.x_final())?;
    Ok((g, c, trace.into_estimate()))
}

/// Mean of per-example gradients.
pub fn batch_gradient(
    examples: &[Example],
    nl: &SplineNonlinearity,
    depth: usize,
) -> Result<Vec<f64>> {
    let refs: Vec<&Example> = examples.iter().collect();
    Ok(batch_gradient_detailed(&refs, nl, depth)?.gradient)
}
