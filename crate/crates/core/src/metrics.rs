use crate::error::{check_len, Error, Result};
use crate::linalg;

/// Reconstruction quality `10·log10(‖x‖²/‖x − x̂‖²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Db(f64),
    /// `x̂ = x` exactly; the ratio is unbounded and not reported as a number.
    PerfectRecovery,
}

impl Snr {
    pub fn db(self) -> Option<f64> {
        match self {
            Snr::Db(v) => Some(v),
            Snr::PerfectRecovery => None,
        }
    }
}

pub fn snr_db(x_true: &[f64], x_hat: &[f64]) -> Result<Snr> {
    check_len("snr", x_true.len(), x_hat.len())?;
    let signal = linalg::norm_sq(x_true);
    if signal == 0.0 {
        return Err(Error::invalid("SNR of an all-zero signal is undefined"));
    }
    let err = linalg::dist_sq(x_true, x_hat);
    if err == 0.0 {
        return Ok(Snr::PerfectRecovery);
    }
    Ok(Snr::Db(10.0 * libm::log10(signal / err)))
}
