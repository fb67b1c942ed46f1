//! Reference estimators: the LASSO solved with FISTA, and the support-aware
//! MMSE genie.

use alloc::vec;
use alloc::vec::Vec;

use crate::datagen::Instance;
use crate::error::{Error, Result};
use crate::ista::{relative_change_below, Problem};
use crate::linalg::{self, Matrix};
use crate::spline::soft_threshold;

/// Iteration cap and relative-change tolerance used for the LASSO baseline.
pub const FISTA_MAX_ITER: usize = 1000;
pub const FISTA_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub x_hat: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// FISTA on `½‖y − Hx‖² + λ‖x‖₁` with step `γ` from the problem.
pub fn fista_lasso(p: &Problem, lambda: f64, max_iter: usize, tol: f64) -> Result<EstimatorResult> {
    fista_lasso_observed(p, lambda, max_iter, tol, |_, _| {})
}

/// [`fista_lasso`] calling `observe(k, x_k)` after every iteration.
pub fn fista_lasso_observed(
    p: &Problem,
    lambda: f64,
    max_iter: usize,
    tol: f64,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<EstimatorResult> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let n = p.n();
    let gamma = p.gamma();
    let threshold = gamma * lambda;
    let mut x = vec![0.0; n];
    let mut v = x.clone();
    let mut grad = vec![0.0; n];
    let mut t = 1.0f64;
    for k in 1..=max_iter {
        p.data_gradient(&v, &mut grad);
        let next: Vec<f64> = v
            .iter()
            .zip(&grad)
            .map(|(vi, gi)| soft_threshold(vi - gamma * gi, threshold))
            .collect();
        if next.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite { iteration: k });
        }
        let t_next = (1.0 + libm::sqrt(1.0 + 4.0 * t * t)) / 2.0;
        let momentum = (t - 1.0) / t_next;
        for i in 0..n {
            v[i] = next[i] + momentum * (next[i] - x[i]);
        }
        t = t_next;
        let done = relative_change_below(&next, &x, tol);
        x = next;
        observe(k, &x);
        if done {
            return Ok(EstimatorResult {
                x_hat: x,
                iterations_used: k,
                converged: true,
            });
        }
    }
    Ok(EstimatorResult {
        x_hat: x,
        iterations_used: max_iter,
        converged: false,
    })
}

/// Posterior mean given the true support, for unit-variance zero-mean actives:
/// `x̂_S = (H_SᵀH_S + σ²I)⁻¹ H_Sᵀ y`, zero off the support.
pub fn genie_mmse(instance: &Instance) -> Result<EstimatorResult> {
    instance.validate()?;
    let support = instance.support();
    let mut x_hat = vec![0.0; instance.n()];
    if !support.is_empty() {
        let hs: Matrix = instance.h.select_columns(&support);
        let mut a = hs.gram();
        for i in 0..support.len() {
            a.set(i, i, a.get(i, i) + instance.noise_var);
        }
        let rhs = hs.matvec_t(&instance.y);
        let xs = linalg::cholesky_solve(&a, &rhs).map_err(|_| {
            Error::Singular("support submatrix is rank deficient and the noise variance is zero")
        })?;
        for (&i, v) in support.iter().zip(xs) {
            x_hat[i] = v;
        }
    }
    Ok(EstimatorResult {
        x_hat,
        iterations_used: 1,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ista::GammaPolicy;

    fn inst(h: Matrix, x: Vec<f64>, y: Vec<f64>, noise_var: f64) -> Instance {
        Instance {
            x_true: x,
            h,
            y,
            noise_var,
            seed: 0,
            stream: 0,
        }
    }

    #[test]
    fn fista_identity_without_penalty() {
        let y = vec![0.5, -1.5, 2.0];
        let p = Problem::new(Matrix::identity(3), y.clone(), GammaPolicy::Auto).unwrap();
        let mut first = None;
        let res = fista_lasso_observed(&p, 0.0, 100, 1e-4, |k, x| {
            if k == 1 {
                first = Some(x.to_vec());
            }
        })
        .unwrap();
        for (a, b) in first.unwrap().iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in res.x_hat.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(res.converged);
    }

    #[test]
    fn fista_rejects_negative_lambda() {
        let p = Problem::new(Matrix::identity(2), vec![1.0, 1.0], GammaPolicy::Auto).unwrap();
        assert!(fista_lasso(&p, -1.0, 10, 1e-4).is_err());
    }

    #[test]
    fn genie_empty_support_is_zero() {
        let h = Matrix::from_fn(3, 4, |i, j| (i + j) as f64);
        let res = genie_mmse(&inst(h, vec![0.0; 4], vec![1.0, 2.0, 3.0], 0.1)).unwrap();
        assert_eq!(res.x_hat, vec![0.0; 4]);
    }

    #[test]
    fn genie_noiseless_is_least_squares_on_support() {
        let h = Matrix::from_fn(4, 6, |i, j| libm::sin((1 + i * 6 + j) as f64));
        let x = vec![0.0, 1.5, 0.0, 0.0, -0.8, 0.0];
        let y = h.matvec(&x);
        let res = genie_mmse(&inst(h, x.clone(), y, 0.0)).unwrap();
        for (a, b) in res.x_hat.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn genie_singular_noiseless_system_is_reported() {
        let h = Matrix::from_fn(2, 3, |i, _| i as f64 + 1.0);
        let x = vec![1.0, 2.0, 0.0];
        let y = h.matvec(&x);
        assert!(matches!(
            genie_mmse(&inst(h, x, y, 0.0)),
            Err(Error::Singular(_))
        ));
    }
}
