//! Synthetic compressive-sensing instances: Bernoulli-Gaussian signals,
//! i.i.d. `N(0, 1/M)` sensing matrices and white Gaussian noise set to a
//! target measurement SNR.
//!
//! Every instance draws from its own ChaCha8 stream: the generator is seeded
//! with the master seed and the stream id is `(domain << 48) | index`, so
//! instances are reproducible one by one and training, probe and test data
//! never share random numbers.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::backprop::Example;
use crate::error::{check_len, Error, Result};
use crate::ista::{GammaPolicy, OperatorForm, Problem};
use crate::linalg::{self, Matrix};

/// Redraws of an all-zero signal before giving up.
pub const MAX_SIGNAL_RETRIES: usize = 100;

/// Disjoint seed domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeedDomain {
    Dataset = 0,
    Train = 1,
    Probe = 2,
    Test = 3,
    /// Shared sensing matrix in fixed-`H` mode.
    SharedMatrix = 4,
    /// Internal randomness of a run, e.g. batch selection.
    Run = 5,
}

const INDEX_BITS: u32 = 48;

pub fn stream_id(domain: SeedDomain, index: u64) -> u64 {
    debug_assert!(index < 1 << INDEX_BITS);
    ((domain as u64) << INDEX_BITS) | index
}

/// Generator for instance `index` of `domain`.
pub fn instance_rng(master_seed: u64, domain: SeedDomain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id(domain, index));
    rng
}

/// `p(x_n) = ρ N(x_n; μ, σ²) + (1 − ρ) δ(x_n)`, i.i.d. over `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalPrior {
    pub n: usize,
    pub sparsity_rho: f64,
    pub active_mean: f64,
    pub active_var: f64,
}

impl SignalPrior {
    /// Standard normal actives.
    pub fn bernoulli_gaussian(n: usize, sparsity_rho: f64) -> Result<Self> {
        let prior = SignalPrior {
            n,
            sparsity_rho,
            active_mean: 0.0,
            active_var: 1.0,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("signal length must be positive"));
        }
        if !(self.sparsity_rho > 0.0 && self.sparsity_rho <= 1.0) {
            return Err(Error::invalid("sparsity ratio must lie in (0, 1]"));
        }
        if !(self.active_var >= 0.0) || !self.active_mean.is_finite() {
            return Err(Error::invalid("invalid active-component distribution"));
        }
        Ok(())
    }
}

pub fn sample_signal<R: Rng + ?Sized>(prior: &SignalPrior, rng: &mut R) -> Vec<f64> {
    let sd = libm::sqrt(prior.active_var);
    (0..prior.n)
        .map(|_| {
            if rng.random::<f64>() < prior.sparsity_rho {
                let g: f64 = rng.sample(StandardNormal);
                prior.active_mean + sd * g
            } else {
                0.0
            }
        })
        .collect()
}

/// `m × n` matrix with i.i.d. `N(0, 1/m)` entries, drawn row by row.
pub fn sample_matrix<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Matrix {
    let sd = 1.0 / libm::sqrt(m as f64);
    Matrix::from_fn(m, n, |_, _| {
        let g: f64 = rng.sample(StandardNormal);
        sd * g
    })
}

/// One realization of `y = Hx + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub x_true: Vec<f64>,
    pub h: Matrix,
    pub y: Vec<f64>,
    pub noise_var: f64,
    /// Master seed of the generator that produced the instance.
    pub seed: u64,
    /// Stream id within the master seed, see [`stream_id`].
    pub stream: u64,
}

impl Instance {
    pub fn n(&self) -> usize {
        self.h.cols()
    }

    pub fn m(&self) -> usize {
        self.h.rows()
    }

    pub fn validate(&self) -> Result<()> {
        check_len("instance signal", self.h.cols(), self.x_true.len())?;
        check_len("instance measurements", self.h.rows(), self.y.len())?;
        if !(self.noise_var >= 0.0) {
            return Err(Error::invalid("noise variance must be non-negative"));
        }
        Ok(())
    }

    /// Support of the true signal.
    pub fn support(&self) -> Vec<usize> {
        self.x_true
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_problem(&self, policy: GammaPolicy, form: OperatorForm) -> Result<Problem> {
        Problem::with_form(self.h.clone(), self.y.clone(), policy, form)
    }

    pub fn to_example(&self, policy: GammaPolicy, form: OperatorForm) -> Result<Example> {
        Example::new(self.to_problem(policy, form)?, self.x_true.clone())
    }
}

fn noisy_measurements<R: Rng + ?Sized>(
    h: &Matrix,
    x: &[f64],
    snr_db: f64,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let mut y = h.matvec(x);
    let power = linalg::norm_sq(&y);
    let noise_var = power / (h.rows() as f64 * libm::pow(10.0, snr_db / 10.0));
    let sd = libm::sqrt(noise_var);
    for v in y.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *v += sd * g;
    }
    (y, noise_var)
}

/// Draws `x` and then `H`, and adds noise with variance
/// `‖Hx‖² / (M·10^{snr_db/10})`. A signal with `Hx = 0` is redrawn.
pub fn make_instance<R: Rng + ?Sized>(
    prior: &SignalPrior,
    m: usize,
    snr_db: f64,
    rng: &mut R,
) -> Result<Instance> {
    if m == 0 {
        return Err(Error::invalid("measurement count must be positive"));
    }
    prior.validate()?;
    let mut x = sample_signal(prior, rng);
    let h = sample_matrix(m, prior.n, rng);
    finish_instance(prior, h, &mut x, snr_db, rng)
}

/// [`make_instance`] with a given sensing matrix.
pub fn make_instance_with_matrix<R: Rng + ?Sized>(
    prior: &SignalPrior,
    h: Matrix,
    snr_db: f64,
    rng: &mut R,
) -> Result<Instance> {
    prior.validate()?;
    check_len("sensing matrix columns", prior.n, h.cols())?;
    let mut x = sample_signal(prior, rng);
    finish_instance(prior, h, &mut x, snr_db, rng)
}

fn finish_instance<R: Rng + ?Sized>(
    prior: &SignalPrior,
    h: Matrix,
    x: &mut Vec<f64>,
    snr_db: f64,
    rng: &mut R,
) -> Result<Instance> {
    if !snr_db.is_finite() {
        return Err(Error::invalid("target SNR must be finite"));
    }
    let mut retries = 0;
    while linalg::norm_sq(&h.matvec(x)) == 0.0 {
        if retries == MAX_SIGNAL_RETRIES {
            return Err(Error::DegenerateSignal { retries });
        }
        *x = sample_signal(prior, rng);
        retries += 1;
    }
    let (y, noise_var) = noisy_measurements(&h, x, snr_db, rng);
    Ok(Instance {
        x_true: core::mem::take(x),
        h,
        y,
        noise_var,
        seed: 0,
        stream: 0,
    })
}

/// Parameters of a family of instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub prior: SignalPrior,
    pub m: usize,
    pub snr_db: f64,
    pub master_seed: u64,
    /// Share one sensing matrix across all instances instead of drawing a
    /// fresh one per instance.
    pub fixed_matrix: bool,
}

impl DatasetSpec {
    /// Instance `index` of `domain`.
    pub fn instance(&self, domain: SeedDomain, index: u64) -> Result<Instance> {
        let mut rng = instance_rng(self.master_seed, domain, index);
        let mut inst = if self.fixed_matrix {
            let mut hrng = instance_rng(self.master_seed, SeedDomain::SharedMatrix, 0);
            let h = sample_matrix(self.m, self.prior.n, &mut hrng);
            make_instance_with_matrix(&self.prior, h, self.snr_db, &mut rng)?
        } else {
            make_instance(&self.prior, self.m, self.snr_db, &mut rng)?
        };
        inst.seed = self.master_seed;
        inst.stream = stream_id(domain, index);
        Ok(inst)
    }

    /// Instances `0..count` of `domain`.
    pub fn generate(&self, domain: SeedDomain, count: usize) -> Result<Vec<Instance>> {
        (0..count as u64)
            .map(|i| {
                self.instance(domain, i)
                    .map_err(|e| e.at_example(i as usize))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_prior_has_no_structural_zeros() {
        let prior = SignalPrior::bernoulli_gaussian(100_000, 1.0).unwrap();
        let mut rng = instance_rng(1, SeedDomain::Dataset, 0);
        let x = sample_signal(&prior, &mut rng);
        assert!(x.iter().all(|&v| v != 0.0));
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64;
        // sd of the sample variance of N(0,1) is √(2/n)
        let band = 3.0 * libm::sqrt(2.0 / x.len() as f64);
        assert!((var - 1.0).abs() < band, "var {var}");
    }

    #[test]
    fn support_size_matches_binomial_mean() {
        let (n, rho, draws) = (512usize, 0.2, 1000usize);
        let prior = SignalPrior::bernoulli_gaussian(n, rho).unwrap();
        let mut rng = instance_rng(2, SeedDomain::Dataset, 0);
        let total: usize = (0..draws)
            .map(|_| {
                sample_signal(&prior, &mut rng)
                    .iter()
                    .filter(|v| **v != 0.0)
                    .count()
            })
            .sum();
        let mean = total as f64 / draws as f64;
        let band = 3.0 * libm::sqrt(n as f64 * rho * (1.0 - rho) / draws as f64);
        assert!((mean - 102.4).abs() < band, "mean support {mean}");
    }

    #[test]
    fn matrix_moments() {
        let m = 100;
        let mut rng = instance_rng(3, SeedDomain::Dataset, 0);
        let h = sample_matrix(m, 10_000, &mut rng);
        let var = h.as_slice().iter().map(|v| v * v).sum::<f64>() / h.as_slice().len() as f64;
        assert!((var * m as f64 - 1.0).abs() < 0.01, "entry variance {var}");
    }

    #[test]
    fn single_column_norm_is_near_one() {
        // ‖h‖² ~ χ²_100/100; P(|‖h‖² − 1| > 0.5) < 1e-3.
        for i in 0..20 {
            let mut rng = instance_rng(4, SeedDomain::Dataset, i);
            let h = sample_matrix(100, 1, &mut rng);
            let sq = linalg::norm_sq(h.as_slice());
            assert!((0.5..=1.5).contains(&sq), "column norm² {sq}");
        }
    }

    #[test]
    fn vanishing_noise_at_high_snr() {
        let prior = SignalPrior::bernoulli_gaussian(32, 0.3).unwrap();
        let mut rng = instance_rng(5, SeedDomain::Dataset, 0);
        let inst = make_instance(&prior, 16, 300.0, &mut rng).unwrap();
        let hx = inst.h.matvec(&inst.x_true);
        for (a, b) in hx.iter().zip(&inst.y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn realized_snr_concentrates_at_target() {
        let spec = DatasetSpec {
            prior: SignalPrior::bernoulli_gaussian(64, 0.2).unwrap(),
            m: 48,
            snr_db: 30.0,
            master_seed: 6,
            fixed_matrix: false,
        };
        let mut total = 0.0;
        let count = 1000;
        for i in 0..count {
            let inst = spec.instance(SeedDomain::Dataset, i).unwrap();
            let hx = inst.h.matvec(&inst.x_true);
            let e: Vec<f64> = inst.y.iter().zip(&hx).map(|(a, b)| a - b).collect();
            total += 10.0 * libm::log10(linalg::norm_sq(&hx) / linalg::norm_sq(&e));
        }
        let mean = total / count as f64;
        // bias of the realized SNR is about 10/(M ln 10) dB
        assert!((mean - 30.0).abs() < 0.2, "mean realized SNR {mean}");
    }

    #[test]
    fn replay_and_domain_separation() {
        let spec = DatasetSpec {
            prior: SignalPrior::bernoulli_gaussian(16, 0.5).unwrap(),
            m: 8,
            snr_db: 30.0,
            master_seed: 7,
            fixed_matrix: false,
        };
        let a = spec.instance(SeedDomain::Train, 3).unwrap();
        assert_eq!(a, spec.instance(SeedDomain::Train, 3).unwrap());
        assert_ne!(a.h, spec.instance(SeedDomain::Test, 3).unwrap().h);
        assert_ne!(a.h, spec.instance(SeedDomain::Train, 4).unwrap().h);
    }

    #[test]
    fn fixed_matrix_mode_shares_h() {
        let spec = DatasetSpec {
            prior: SignalPrior::bernoulli_gaussian(16, 0.5).unwrap(),
            m: 8,
            snr_db: 30.0,
            master_seed: 8,
            fixed_matrix: true,
        };
        let a = spec.instance(SeedDomain::Train, 0).unwrap();
        let b = spec.instance(SeedDomain::Test, 9).unwrap();
        assert_eq!(a.h, b.h);
        assert_ne!(a.x_true, b.x_true);
    }

    #[test]
    fn degenerate_signal_exhausts_retries() {
        let prior = SignalPrior::bernoulli_gaussian(4, 0.5).unwrap();
        let mut rng = instance_rng(9, SeedDomain::Dataset, 0);
        let err =
            make_instance_with_matrix(&prior, Matrix::zeros(3, 4), 30.0, &mut rng).unwrap_err();
        assert_eq!(
            err,
            Error::DegenerateSignal {
                retries: MAX_SIGNAL_RETRIES
            }
        );
    }

    #[test]
    fn rejects_bad_prior() {
        assert!(SignalPrior::bernoulli_gaussian(10, 0.0).is_err());
        assert!(SignalPrior::bernoulli_gaussian(10, 1.5).is_err());
        assert!(SignalPrior::bernoulli_gaussian(0, 0.5).is_err());
    }
}
