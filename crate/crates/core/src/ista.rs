//! ISTA in the form `z^t = S x^{t−1} + b`, `x^t = φ(z^t)` with
//! `S = I − γHᵀH` and `b = γHᵀy`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix};
use crate::spline::{soft_threshold, SplineNonlinearity};

/// Power iteration settings used by [`GammaPolicy::Auto`].
pub const POWER_ITER_REL_TOL: f64 = 1e-8;
pub const POWER_ITER_MAX: usize = 1000;

/// How the step size `γ` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GammaPolicy {
    /// `γ = 1/λ_max(HᵀH)`.
    #[default]
    Auto,
    Fixed(f64),
}

/// Storage of the operator `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OperatorForm {
    /// `S` materialized as an `N × N` matrix.
    #[default]
    Dense,
    /// `S x = x − γHᵀ(Hx)`, two products with `H` per application.
    Factored,
}

/// A linear inverse problem `y = Hx + e` with the cached ISTA operator.
#[derive(Debug, Clone)]
pub struct Problem {
    h: Matrix,
    y: Vec<f64>,
    gamma: f64,
    lambda_max: Option<f64>,
    s: Option<Matrix>,
    b: Vec<f64>,
}

impl Problem {
    /// Builds the problem with a dense `S`.
    pub fn new(h: Matrix, y: Vec<f64>, policy: GammaPolicy) -> Result<Self> {
        Self::with_form(h, y, policy, OperatorForm::Dense)
    }

    pub fn with_form(
        h: Matrix,
        y: Vec<f64>,
        policy: GammaPolicy,
        form: OperatorForm,
    ) -> Result<Self> {
        if h.rows() == 0 || h.cols() == 0 {
            return Err(Error::Empty("sensing matrix"));
        }
        check_len("measurements", h.rows(), y.len())?;
        let (gamma, lambda_max) = match policy {
            GammaPolicy::Auto => {
                let p = linalg::power_iteration(&h, POWER_ITER_REL_TOL, POWER_ITER_MAX);
                if !(p.eigenvalue > 0.0) {
                    return Err(Error::invalid("HᵀH has no positive eigenvalue"));
                }
                (1.0 / p.eigenvalue, Some(p.eigenvalue))
            }
            GammaPolicy::Fixed(g) => {
                if !(g > 0.0) || !g.is_finite() {
                    return Err(Error::invalid("fixed step size must be positive"));
                }
                (g, None)
            }
        };
        let mut b = h.matvec_t(&y);
        b.iter_mut().for_each(|v| *v *= gamma);
        let s = match form {
            OperatorForm::Dense => {
                let n = h.cols();
                let mut s = h.gram();
                s.scale(-gamma);
                for i in 0..n {
                    s.set(i, i, s.get(i, i) + 1.0);
                }
                Some(s)
            }
            OperatorForm::Factored => None,
        };
        Ok(Problem {
            h,
            y,
            gamma,
            lambda_max,
            s,
            b,
        })
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `λ_max(HᵀH)` when the step size came from power iteration.
    pub fn lambda_max(&self) -> Option<f64> {
        self.lambda_max
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Dense `S`, if materialized.
    pub fn s(&self) -> Option<&Matrix> {
        self.s.as_ref()
    }

    pub fn form(&self) -> OperatorForm {
        if self.s.is_some() {
            OperatorForm::Dense
        } else {
            OperatorForm::Factored
        }
    }

    /// Signal length `N`.
    pub fn n(&self) -> usize {
        self.h.cols()
    }

    /// Measurement count `M`.
    pub fn m(&self) -> usize {
        self.h.rows()
    }

    /// `out = S x`.
    pub fn apply_s(&self, x: &[f64], out: &mut [f64]) {
        match &self.s {
            Some(s) => s.matvec_into(x, out),
            None => {
                let hx = self.h.matvec(x);
                self.h.matvec_t_into(&hx, out);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = xi - self.gamma * *o;
                }
            }
        }
    }

    /// `out = Sᵀ x`. `S` is symmetric, so this is [`Problem::apply_s`].
    #[inline]
    pub fn apply_s_t(&self, x: &[f64], out: &mut [f64]) {
        self.apply_s(x, out)
    }

    /// `½‖y − Hx‖² + λ‖x‖₁`.
    pub fn lasso_objective(&self, lambda: f64, x: &[f64]) -> f64 {
        let hx = self.h.matvec(x);
        let fit = linalg::dist_sq(&hx, &self.y);
        0.5 * fit + lambda * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// `∇ ½‖y − Hx‖² = Hᵀ(Hx − y)`.
    pub(crate) fn data_gradient(&self, x: &[f64], out: &mut [f64]) {
        let mut r = self.h.matvec(x);
        r.iter_mut().zip(&self.y).for_each(|(ri, yi)| *ri -= yi);
        self.h.matvec_t_into(&r, out);
    }
}

/// Stored forward pass of the unrolled network.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateTrace {
    x0: Vec<f64>,
    z_history: Vec<Vec<f64>>,
    x_final: Vec<f64>,
}

impl IterateTrace {
    pub fn depth(&self) -> usize {
        self.z_history.len()
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    /// Pre-activations `z^1 … z^T`.
    pub fn z_history(&self) -> &[Vec<f64>] {
        &self.z_history
    }

    pub fn x_final(&self) -> &[f64] {
        &self.x_final
    }

    pub fn into_estimate(self) -> Vec<f64> {
        self.x_final
    }
}

fn check_finite(v: &[f64], iteration: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { iteration })
    }
}

/// Runs `depth` layers of ISTA with nonlinearity `nl`, keeping every `z^t`.
pub fn ista_forward(
    p: &Problem,
    nl: &SplineNonlinearity,
    x0: &[f64],
    depth: usize,
) -> Result<IterateTrace> {
    if depth == 0 {
        return Err(Error::invalid("depth T must be at least 1"));
    }
    check_len("initial estimate", p.n(), x0.len())?;
    let mut x = x0.to_vec();
    let mut z_history = Vec::with_capacity(depth);
    for t in 1..=depth {
        let mut z = vec![0.0; p.n()];
        p.apply_s(&x, &mut z);
        linalg::axpy(1.0, &p.b, &mut z);
        check_finite(&z, t)?;
        nl.eval_slice(&z, &mut x);
        check_finite(&x, t)?;
        z_history.push(z);
    }
    Ok(IterateTrace {
        x0: x0.to_vec(),
        z_history,
        x_final: x,
    })
}

/// Final estimate of [`ista_forward`] without storing the trace.
pub fn ista_estimate(
    p: &Problem,
    nl: &SplineNonlinearity,
    x0: &[f64],
    depth: usize,
) -> Result<Vec<f64>> {
    if depth == 0 {
        return Err(Error::invalid("depth T must be at least 1"));
    }
    check_len("initial estimate", p.n(), x0.len())?;
    let mut x = x0.to_vec();
    let mut z = vec![0.0; p.n()];
    for t in 1..=depth {
        p.apply_s(&x, &mut z);
        linalg::axpy(1.0, &p.b, &mut z);
        check_finite(&z, t)?;
        nl.eval_slice(&z, &mut x);
        check_finite(&x, t)?;
    }
    Ok(x)
}

/// `‖x − prev‖ ≤ tol·‖prev‖`.
pub(crate) fn relative_change_below(x: &[f64], prev: &[f64], tol: f64) -> bool {
    libm::sqrt(linalg::dist_sq(x, prev)) <= tol * linalg::norm(prev)
}

/// Plain ISTA for the LASSO with the exact soft threshold `T(·; γλ)`.
///
/// Stops after `max_iter` iterations or once the relative change of the
/// iterate drops to `tol`.
pub fn soft_threshold_ista(
    p: &Problem,
    lambda: f64,
    x0: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    soft_threshold_ista_observed(p, lambda, x0, max_iter, tol, |_, _| {})
}

/// [`soft_threshold_ista`] calling `observe(t, x^t)` after every iteration.
pub fn soft_threshold_ista_observed(
    p: &Problem,
    lambda: f64,
    x0: &[f64],
    max_iter: usize,
    tol: f64,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    check_len("initial estimate", p.n(), x0.len())?;
    let threshold = p.gamma * lambda;
    let mut x = x0.to_vec();
    let mut z = vec![0.0; p.n()];
    for t in 1..=max_iter {
        p.apply_s(&x, &mut z);
        linalg::axpy(1.0, &p.b, &mut z);
        let next: Vec<f64> = z.iter().map(|&v| soft_threshold(v, threshold)).collect();
        check_finite(&next, t)?;
        let done = relative_change_below(&next, &x, tol);
        x = next;
        observe(t, &x);
        if done {
            break;
        }
    }
    Ok(x)
}
