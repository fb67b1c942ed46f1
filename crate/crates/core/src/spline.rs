//! Cardinal B-splines and the learnable pointwise nonlinearity
//!
//! ```text
//! φ(z) = Σ_{k=-K}^{K} c_k β³(z/Δ − k)
//! ```
//!
//! The abscissa is clamped to `[−(K−2)Δ, (K−2)Δ]` before expansion, so `φ`
//! is constant outside that interval and `φ′` is zero there.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};

/// Spline degree of every [`SplineNonlinearity`].
pub const DEGREE: u32 = 3;

/// Cubic B-spline `β³`.
#[inline]
pub fn bspline3(z: f64) -> f64 {
    let a = z.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + a * a * a / 2.0
    } else if a < 2.0 {
        let t = 2.0 - a;
        t * t * t / 6.0
    } else {
        0.0
    }
}

/// Quadratic B-spline `β²`.
#[inline]
pub fn bspline2(z: f64) -> f64 {
    let a = z.abs();
    if a < 0.5 {
        0.75 - a * a
    } else if a < 1.5 {
        1.125 - 0.5 * a * (3.0 - a)
    } else {
        0.0
    }
}

/// `dβ³/dz`, through the degree-reduction rule `β²(z + ½) − β²(z − ½)`.
#[inline]
pub fn bspline3_prime(z: f64) -> f64 {
    bspline2(z + 0.5) - bspline2(z - 0.5)
}

/// Nonzero entries of one row of the basis matrix `Ψ`.
///
/// Indices are grid indices `k ∈ [−K, K]`; there are at most four of them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisRow {
    indices: [isize; 4],
    values: [f64; 4],
    len: usize,
}

impl BasisRow {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (isize, f64)> + '_ {
        self.indices[..self.len]
            .iter()
            .copied()
            .zip(self.values[..self.len].iter().copied())
    }

    pub fn sum(&self) -> f64 {
        self.values[..self.len].iter().sum()
    }
}

/// Constraint set for projected gradient steps on the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ConstraintSet {
    #[default]
    Unconstrained,
    /// Componentwise `lo ≤ c_k ≤ hi`; requires `lo ≤ hi`.
    Box { lo: f64, hi: f64 },
    /// `c_{−k} = −c_k`, i.e. `φ` odd.
    OddSymmetric,
}

/// Orthogonal projection of `c` onto `constraint`. `c` is indexed `k = −K..=K`.
pub fn project_coefficients(c: &[f64], constraint: ConstraintSet) -> Vec<f64> {
    let mut out = c.to_vec();
    project_in_place(&mut out, constraint);
    out
}

pub fn project_in_place(c: &mut [f64], constraint: ConstraintSet) {
    match constraint {
        ConstraintSet::Unconstrained => {}
        ConstraintSet::Box { lo, hi } => {
            for v in c.iter_mut() {
                *v = v.max(lo).min(hi);
            }
        }
        ConstraintSet::OddSymmetric => {
            let n = c.len();
            for i in 0..n / 2 {
                let j = n - 1 - i;
                let odd = (c[j] - c[i]) / 2.0;
                c[j] = odd;
                c[i] = -odd;
            }
            if n % 2 == 1 {
                c[n / 2] = 0.0;
            }
        }
    }
}

/// `sign(z)·max(|z| − threshold, 0)`.
#[inline]
pub fn soft_threshold(z: f64, threshold: f64) -> f64 {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}

/// Pointwise nonlinearity expanded on `2K+1` cubic B-splines with spacing `Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineNonlinearity {
    coefficients: Vec<f64>,
    delta: f64,
    grid_halfwidth: usize,
    init_threshold: Option<f64>,
}

impl SplineNonlinearity {
    pub fn new(grid_halfwidth: usize, delta: f64, coefficients: Vec<f64>) -> Result<Self> {
        if grid_halfwidth < 2 {
            return Err(Error::invalid("grid half-width K must be at least 2"));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::invalid("grid spacing must be positive and finite"));
        }
        check_len(
            "spline coefficients",
            2 * grid_halfwidth + 1,
            coefficients.len(),
        )?;
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("spline coefficients must be finite"));
        }
        Ok(SplineNonlinearity {
            coefficients,
            delta,
            grid_halfwidth,
            init_threshold: None,
        })
    }

    pub fn zeros(grid_halfwidth: usize, delta: f64) -> Result<Self> {
        Self::new(grid_halfwidth, delta, vec![0.0; 2 * grid_halfwidth + 1])
    }

    /// Coefficients `c_k = f(kΔ)`.
    pub fn from_knot_samples(
        grid_halfwidth: usize,
        delta: f64,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let k = grid_halfwidth as isize;
        let c = (-k..=k).map(|i| f(i as f64 * delta)).collect();
        Self::new(grid_halfwidth, delta, c)
    }

    pub fn with_init_threshold(mut self, threshold: f64) -> Self {
        self.init_threshold = Some(threshold);
        self
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Replaces the coefficients; the length must stay `2K+1`.
    pub fn set_coefficients(&mut self, c: Vec<f64>) -> Result<()> {
        check_len("spline coefficients", self.coefficients.len(), c.len())?;
        self.coefficients = c;
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn grid_halfwidth(&self) -> usize {
        self.grid_halfwidth
    }

    pub fn degree(&self) -> u32 {
        DEGREE
    }

    /// Soft threshold the coefficients were fitted to, if any.
    pub fn init_threshold(&self) -> Option<f64> {
        self.init_threshold
    }

    pub fn num_coefficients(&self) -> usize {
        self.coefficients.len()
    }

    /// Storage position of grid index `k`.
    #[inline]
    pub fn slot(&self, k: isize) -> usize {
        (k + self.grid_halfwidth as isize) as usize
    }

    /// Half-width of the interval outside of which `φ` is constant.
    #[inline]
    pub fn clamp_radius(&self) -> f64 {
        (self.grid_halfwidth - 2) as f64 * self.delta
    }

    #[inline]
    fn clamp(&self, z: f64) -> f64 {
        let r = self.clamp_radius();
        z.max(-r).min(r)
    }

    /// Nonzero basis values `β³(z_c/Δ − k)` at the clamped abscissa.
    pub fn basis_row(&self, z: f64) -> BasisRow {
        let u = self.clamp(z) / self.delta;
        let base = libm::floor(u) as isize;
        let mut row = BasisRow {
            indices: [0; 4],
            values: [0.0; 4],
            len: 0,
        };
        for k in base - 1..=base + 2 {
            let v = bspline3(u - k as f64);
            if v != 0.0 {
                row.indices[row.len] = k;
                row.values[row.len] = v;
                row.len += 1;
            }
        }
        row
    }

    /// `φ(z)`.
    pub fn eval(&self, z: f64) -> f64 {
        self.basis_row(z)
            .iter()
            .map(|(k, v)| self.coefficients[self.slot(k)] * v)
            .sum()
    }

    /// `φ′(z)`; zero outside the clamp interval.
    pub fn eval_prime(&self, z: f64) -> f64 {
        if z.abs() > self.clamp_radius() {
            return 0.0;
        }
        let u = z / self.delta;
        let base = libm::floor(u) as isize;
        let mut acc = 0.0;
        for k in base - 1..=base + 2 {
            let d = bspline3_prime(u - k as f64);
            if d != 0.0 {
                acc += self.coefficients[self.slot(k)] * d;
            }
        }
        acc / self.delta
    }

    pub fn eval_slice(&self, z: &[f64], out: &mut [f64]) {
        for (o, &zi) in out.iter_mut().zip(z) {
            *o = self.eval(zi);
        }
    }

    pub fn project(&mut self, constraint: ConstraintSet) {
        project_in_place(&mut self.coefficients, constraint);
    }
}

/// Coefficients of the cubic spline that interpolates `f` at every knot
/// `kΔ`, `|k| ≤ K − 1`.
///
/// The two outermost coefficients are pinned to `f(±KΔ)`, which reproduces
/// `f` exactly wherever it is affine near the grid boundary. The interior
/// coefficients solve the tridiagonal system `(c_{j−1} + 4c_j + c_{j+1})/6 = f(jΔ)`.
pub fn fit_knots(
    grid_halfwidth: usize,
    delta: f64,
    f: impl Fn(f64) -> f64,
) -> Result<SplineNonlinearity> {
    if grid_halfwidth < 2 {
        return Err(Error::invalid("grid half-width K must be at least 2"));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid("grid spacing must be positive and finite"));
    }
    let k = grid_halfwidth as isize;
    let samples: Vec<f64> = (-k..=k).map(|i| f(i as f64 * delta)).collect();
    let total = samples.len();
    let mut c = vec![0.0; total];
    c[0] = samples[0];
    c[total - 1] = samples[total - 1];

    // Thomas algorithm on the interior unknowns 1..total-1.
    let n = total - 2;
    let mut rhs: Vec<f64> = samples[1..total - 1].iter().map(|v| 6.0 * v).collect();
    rhs[0] -= c[0];
    rhs[n - 1] -= c[total - 1];
    let mut upper = vec![0.0; n];
    let mut diag = 4.0;
    upper[0] = 1.0 / diag;
    rhs[0] /= diag;
    for i in 1..n {
        diag = 4.0 - upper[i - 1];
        upper[i] = 1.0 / diag;
        rhs[i] = (rhs[i] - rhs[i - 1]) / diag;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= upper[i] * rhs[i + 1];
    }
    c[1..total - 1].copy_from_slice(&rhs);
    SplineNonlinearity::new(grid_halfwidth, delta, c)
}

/// Spline interpolant of the soft-thresholding function, exactly odd.
pub fn fit_soft_threshold(
    grid_halfwidth: usize,
    delta: f64,
    threshold: f64,
) -> Result<SplineNonlinearity> {
    if !(threshold >= 0.0) || !threshold.is_finite() {
        return Err(Error::invalid(
            "soft threshold must be finite and non-negative",
        ));
    }
    let mut nl = fit_knots(grid_halfwidth, delta, |z| soft_threshold(z, threshold))?;
    nl.project(ConstraintSet::OddSymmetric);
    Ok(nl.with_init_threshold(threshold))
}
