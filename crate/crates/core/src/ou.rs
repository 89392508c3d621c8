//! The forward Ornstein–Uhlenbeck process `dX = −X dt + √2 dB`.
//!
//! Started from `X_0 = y`, its law at time `t` is `N(μ(t)·y, σ(t)²·I)` with
//! `μ(t) = e^{−t}` and `σ(t) = √(1 − e^{−2t})`. Everything here works on
//! plain `&[f64]` points; all densities are returned as logs.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::math::{log_gauss_iso, scaled_dist_sq};
use crate::rng::standard_normal;

/// Noise schedule of the forward process at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuCoefficients {
    pub t: f64,
    /// Signal scale `μ(t) = e^{−t}`.
    pub mu: f64,
    /// Noise scale `σ(t) = √(1 − e^{−2t})`.
    pub sigma: f64,
}

impl OuCoefficients {
    /// `σ(t)²`, computed as `−expm1(−2t)` so it stays accurate for small t.
    pub fn variance(&self) -> f64 {
        -(-2.0 * self.t).exp_m1()
    }

    /// `true` when `σ(t) = 0` and scores/kernels are undefined.
    pub fn is_singular(&self) -> bool {
        self.t == 0.0
    }
}

/// Schedule at time `t ≥ 0`. `t = 0` is accepted (μ = 1, σ = 0) but every
/// score or kernel operation rejects it.
pub fn coefficients(t: f64) -> Result<OuCoefficients> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("time must be nonnegative, got {t}")));
    }
    let mu = (-t).exp();
    let sigma = (-(-2.0 * t).exp_m1()).sqrt();
    Ok(OuCoefficients { t, mu, sigma })
}

/// Schedule at a strictly positive time; `t ≤ 0` is a singularity.
pub(crate) fn positive_coefficients(t: f64) -> Result<OuCoefficients> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::domain(format!("time must be positive, got {t}")));
    }
    if t == 0.0 {
        return Err(Error::Singular { t });
    }
    coefficients(t)
}

/// Draw `X_t = μ(t)·y + σ(t)·Z`.
pub fn forward_sample<R: Rng + ?Sized>(y: &[f64], t: f64, rng: &mut R) -> Result<Vec<f64>> {
    let z: Vec<f64> = y.iter().map(|_| standard_normal(rng)).collect();
    forward_from_noise(y, t, &z)
}

/// `μ(t)·y + σ(t)·z` for a given noise vector.
pub fn forward_from_noise(y: &[f64], t: f64, z: &[f64]) -> Result<Vec<f64>> {
    check_dim(y.len(), z.len())?;
    let c = coefficients(t)?;
    Ok(y.iter().zip(z).map(|(&yi, &zi)| c.mu * yi + c.sigma * zi).collect())
}

/// `log N(x; μ(t)·y, σ(t)²·I)`.
pub fn transition_log_density(x: &[f64], y: &[f64], t: f64) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    let c = positive_coefficients(t)?;
    Ok(log_gauss_iso(x.len(), c.variance(), scaled_dist_sq(x, c.mu, y)))
}

/// `u(t, x | y) = −(x − μ(t)·y) / σ(t)²`, the x-gradient of
/// [`transition_log_density`].
pub fn conditional_score(x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dim(x.len(), y.len())?;
    let c = positive_coefficients(t)?;
    let var = c.variance();
    Ok(x.iter()
        .zip(y)
        .map(|(&xi, &yi)| -(xi - c.mu * yi) / var)
        .collect())
}
