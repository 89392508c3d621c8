//! Score fields `(t, x) ↦ ∇ₓ log p_t(x)` and the Gaussian algebra behind them.
//!
//! Two concrete fields matter: the exact score of an isotropic Gaussian
//! target, and the empirical optimal score `s^N` of a finite dataset. The
//! latter is the gradient of the mixture `(1/N) Σ N(x; μ(t)y_i, σ(t)²I)` and
//! is evaluated as
//!
//! ```text
//! s^N(t, x) = −x/σ(t)² + μ(t)/σ(t)² · Σ_i w_i(t, x) y_i
//! w_i(t, x) = softmax_i(−‖x − μ(t) y_i‖² / 2σ(t)²)
//! ```
//!
//! with a single streaming log-sum-exp pass over the dataset.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::math::{log_gauss_iso, norm_sq, scaled_dist_sq, softmax_into, LN_2PI};
use crate::ou::{positive_coefficients, OuCoefficients};
use crate::rng::standard_normal;

/// `N(mean, variance·I_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropicGaussianTarget {
    mean: Vec<f64>,
    variance: f64,
}

impl IsotropicGaussianTarget {
    pub fn new(mean: Vec<f64>, variance: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::domain("target mean must have at least one coordinate"));
        }
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::domain(format!(
                "target variance must be positive, got {variance}"
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::domain("target mean must be finite"));
        }
        Ok(Self { mean, variance })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            variance: 1.0,
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let sd = self.variance.sqrt();
        self.mean
            .iter()
            .map(|m| m + sd * standard_normal(rng))
            .collect()
    }

    /// Log-density of the diffused marginal `p_t` at `x`.
    pub fn marginal_log_density(&self, t: f64, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let (mean, var) = gaussian_marginal(self, t)?;
        let r2 = x.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(log_gauss_iso(x.len(), var, r2))
    }

    /// Draw from the diffused marginal `p_t`.
    pub fn sample_marginal<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Result<Vec<f64>> {
        let (mean, var) = gaussian_marginal(self, t)?;
        let sd = var.sqrt();
        Ok(mean
            .iter()
            .map(|m| m + sd * standard_normal(rng))
            .collect())
    }
}

/// Parameters of `p_t` for a Gaussian target:
/// `(μ(t)·mean, σ(t)² + μ(t)²·variance)`.
pub fn gaussian_marginal(target: &IsotropicGaussianTarget, t: f64) -> Result<(Vec<f64>, f64)> {
    let c = positive_coefficients(t)?;
    let mean = target.mean.iter().map(|m| c.mu * m).collect();
    Ok((mean, c.variance() + c.mu * c.mu * target.variance))
}

/// Which family a score field belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    ExactGaussian,
    EmpiricalOptimal,
    Conditional,
    Custom(String),
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreKind::ExactGaussian => f.write_str("exact-gaussian"),
            ScoreKind::EmpiricalOptimal => f.write_str("empirical-optimal"),
            ScoreKind::Conditional => f.write_str("conditional"),
            ScoreKind::Custom(name) => write!(f, "custom:{name}"),
        }
    }
}

/// A deterministic vector field `(t, x) ↦ s(t, x) ∈ R^d`, defined for `t > 0`.
pub trait ScoreField: Sync {
    fn dim(&self) -> usize;

    fn kind(&self) -> ScoreKind;

    /// Write `s(t, x)` into `out` (length `dim`).
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;

    fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, x, &mut out)?;
        Ok(out)
    }
}

impl<S: ScoreField + ?Sized> ScoreField for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> ScoreKind {
        (**self).kind()
    }
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).eval_into(t, x, out)
    }
}

/// Exact score of a Gaussian target:
/// `u(t, x) = (μ(t)·mean − x) / (σ(t)² + μ(t)²·variance)`.
#[derive(Debug, Clone)]
pub struct ExactGaussianScore {
    target: IsotropicGaussianTarget,
}

pub fn exact_gaussian_score(target: &IsotropicGaussianTarget) -> ExactGaussianScore {
    ExactGaussianScore {
        target: target.clone(),
    }
}

impl ScoreField for ExactGaussianScore {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn kind(&self) -> ScoreKind {
        ScoreKind::ExactGaussian
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        let c = positive_coefficients(t)?;
        let var = c.variance() + c.mu * c.mu * self.target.variance;
        for ((o, &xi), &m) in out.iter_mut().zip(x).zip(&self.target.mean) {
            *o = (c.mu * m - xi) / var;
        }
        Ok(())
    }
}

/// Score of a single transition kernel, `u(t, x | y)`.
#[derive(Debug, Clone)]
pub struct ConditionalScore {
    y: Vec<f64>,
}

impl ConditionalScore {
    pub fn new(y: Vec<f64>) -> Self {
        Self { y }
    }
}

impl ScoreField for ConditionalScore {
    fn dim(&self) -> usize {
        self.y.len()
    }

    fn kind(&self) -> ScoreKind {
        ScoreKind::Conditional
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        let c = positive_coefficients(t)?;
        let var = c.variance();
        for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(&self.y) {
            *o = -(xi - c.mu * yi) / var;
        }
        Ok(())
    }
}

/// The closed-form minimizer of the empirical conditional score-matching
/// loss over a dataset.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalOptimalScore<'a> {
    dataset: &'a Dataset,
}

pub fn empirical_optimal_score(dataset: &Dataset) -> EmpiricalOptimalScore<'_> {
    EmpiricalOptimalScore { dataset }
}

impl EmpiricalOptimalScore<'_> {
    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }
}

impl ScoreField for EmpiricalOptimalScore<'_> {
    fn dim(&self) -> usize {
        self.dataset.dim()
    }

    fn kind(&self) -> ScoreKind {
        ScoreKind::EmpiricalOptimal
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        let c = positive_coefficients(t)?;
        weighted_mean_into(self.dataset, &c, x, out)?;
        let var = c.variance();
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = (c.mu * *o - xi) / var;
        }
        Ok(())
    }
}

/// A score field backed by a closure; used for perturbed and synthetic
/// fields in loss comparisons.
pub struct FnScore<F> {
    dim: usize,
    name: String,
    f: F,
}

impl<F> FnScore<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, name: impl Into<String>, f: F) -> Self {
        Self {
            dim,
            name: name.into(),
            f,
        }
    }
}

impl<F> ScoreField for FnScore<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> ScoreKind {
        ScoreKind::Custom(self.name.clone())
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        if !(t > 0.0) {
            return Err(Error::Singular { t });
        }
        (self.f)(t, x, out);
        Ok(())
    }
}

/// The field that is identically zero.
pub fn zero_score(dim: usize) -> FnScore<impl Fn(f64, &[f64], &mut [f64]) + Sync> {
    FnScore::new(dim, "zero", |_, _, out: &mut [f64]| out.fill(0.0))
}

/// Softmax-weighted mean `Σ w_i y_i` written into `out`, streaming over the
/// dataset with a running max. Returns `log Σ_i exp(ℓ_i)` where
/// `ℓ_i = −‖x − μ y_i‖² / 2σ²`.
///
/// Components whose log-weight falls more than ~745 below the running max
/// underflow to exactly zero.
fn weighted_mean_into(
    dataset: &Dataset,
    c: &OuCoefficients,
    x: &[f64],
    out: &mut [f64],
) -> Result<f64> {
    let inv = 0.5 / c.variance();
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    out.fill(0.0);
    for y in dataset.iter() {
        let l = -scaled_dist_sq(x, c.mu, y) * inv;
        if l > max {
            let r = (max - l).exp();
            sum *= r;
            out.iter_mut().for_each(|o| *o *= r);
            max = l;
        }
        let w = (l - max).exp();
        sum += w;
        for (o, &yi) in out.iter_mut().zip(y) {
            *o += w * yi;
        }
    }
    if !(sum > 0.0) || !max.is_finite() {
        return Err(Error::Internal(format!(
            "all mixture components vanished at t = {}",
            c.t
        )));
    }
    out.iter_mut().for_each(|o| *o /= sum);
    Ok(max + sum.ln())
}

fn log_kernels(dataset: &Dataset, c: &OuCoefficients, x: &[f64]) -> Vec<f64> {
    let inv = 0.5 / c.variance();
    dataset
        .iter()
        .map(|y| -scaled_dist_sq(x, c.mu, y) * inv)
        .collect()
}

/// `w_i = p_t(x|y_i) / Σ_j p_t(x|y_j)`.
pub fn softmax_weights(dataset: &Dataset, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(dataset.dim(), x.len())?;
    let c = positive_coefficients(t)?;
    let logits = log_kernels(dataset, &c, x);
    let mut w = vec![0.0; logits.len()];
    let lse = softmax_into(&logits, &mut w);
    if !lse.is_finite() {
        return Err(Error::Internal("softmax normalizer is not finite".into()));
    }
    Ok(w)
}

/// `log (1/N) Σ_i N(x; μ(t) y_i, σ(t)² I)`.
pub fn empirical_mixture_log_density(dataset: &Dataset, t: f64, x: &[f64]) -> Result<f64> {
    check_dim(dataset.dim(), x.len())?;
    let c = positive_coefficients(t)?;
    let mut scratch = vec![0.0; x.len()];
    let lse = weighted_mean_into(dataset, &c, x, &mut scratch)?;
    let d = x.len() as f64;
    Ok(lse - (dataset.len() as f64).ln() - 0.5 * d * (LN_2PI + c.variance().ln()))
}

/// Parameters of `N(meanA, varA·I) * N(meanB, varB·I)`.
pub fn gaussian_convolution(
    mean_a: &[f64],
    var_a: f64,
    mean_b: &[f64],
    var_b: f64,
) -> Result<(Vec<f64>, f64)> {
    check_dim(mean_a.len(), mean_b.len())?;
    if !(var_a > 0.0) || !(var_b > 0.0) {
        return Err(Error::domain(format!(
            "convolution needs positive variances, got {var_a} and {var_b}"
        )));
    }
    let mean = mean_a.iter().zip(mean_b).map(|(a, b)| a + b).collect();
    Ok((mean, var_a + var_b))
}

/// Norms involved in bounding the softmax-weighted average of the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedAverageBounds {
    /// `‖Σ_i w_i(t, x) y_i‖²`
    pub lhs: f64,
    /// `Σ_i w_i(t, x) ‖y_i‖²`, which dominates `lhs` for any probability
    /// weights (Cauchy–Schwarz, then `Σ w_i = 1`).
    pub bound_uniform: f64,
    /// `max_i ‖y_i‖²`
    pub bound_radius: f64,
}

impl WeightedAverageBounds {
    pub fn holds(&self, tol: f64) -> bool {
        let slack = tol * self.bound_radius.max(1.0);
        self.lhs <= self.bound_uniform + slack && self.bound_uniform <= self.bound_radius + slack
    }
}

pub fn weighted_average_bounds_check(
    dataset: &Dataset,
    t: f64,
    x: &[f64],
) -> Result<WeightedAverageBounds> {
    let w = softmax_weights(dataset, t, x)?;
    let mut avg = vec![0.0; dataset.dim()];
    let mut weighted_sq = 0.0;
    for (wi, y) in w.iter().zip(dataset.iter()) {
        for (a, &yi) in avg.iter_mut().zip(y) {
            *a += wi * yi;
        }
        weighted_sq += wi * norm_sq(y);
    }
    Ok(WeightedAverageBounds {
        lhs: norm_sq(&avg),
        bound_uniform: weighted_sq,
        bound_radius: dataset.max_norm_sq(),
    })
}

/// The weighted-average inequality with its canonical weights
/// `softmax(−‖y_i‖²)`: returns `(‖Σ w_i y_i‖², (1/N) Σ ‖y_i‖²)`; the first
/// never exceeds the second.
pub fn canonical_weighted_average(dataset: &Dataset) -> (f64, f64) {
    let logits: Vec<f64> = dataset.iter().map(|y| -norm_sq(y)).collect();
    let mut w = vec![0.0; logits.len()];
    softmax_into(&logits, &mut w);
    let mut avg = vec![0.0; dataset.dim()];
    for (wi, y) in w.iter().zip(dataset.iter()) {
        for (a, &yi) in avg.iter_mut().zip(y) {
            *a += wi * yi;
        }
    }
    (norm_sq(&avg), dataset.second_moment())
}

/// Lower bound on `log p_t^N(x)` obtained from Young's inequality
/// `2aᵀb ≤ λ‖a‖² + ‖b‖²/λ`:
///
/// ```text
/// log p_t^N(x) ≥ −(d/2) log(2πσ²) − (1 + λμ)/(2σ²) ‖x‖²
///               + log (1/N) Σ_i exp(−(μ + λμ²)/(2λσ²) ‖y_i‖²)
/// ```
pub fn mixture_log_density_lower_bound(
    dataset: &Dataset,
    t: f64,
    x: &[f64],
    lambda: f64,
) -> Result<f64> {
    check_dim(dataset.dim(), x.len())?;
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
    }
    let c = positive_coefficients(t)?;
    let var = c.variance();
    let d = x.len() as f64;
    let coef_y = (c.mu + lambda * c.mu * c.mu) / (2.0 * lambda * var);
    let logits: Vec<f64> = dataset.iter().map(|y| -coef_y * norm_sq(y)).collect();
    let log_k = crate::math::log_sum_exp(&logits) - (dataset.len() as f64).ln();
    Ok(-0.5 * d * (LN_2PI + var.ln()) - (1.0 + lambda * c.mu) / (2.0 * var) * norm_sq(x) + log_k)
}

/// `v_t^N(x) = (1/N) Σ_i y_i p_t(x | y_i)`, the unnormalized numerator of
/// the weighted mean. Returned as a raw (not log) vector.
pub fn ensemble_average(dataset: &Dataset, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(dataset.dim(), x.len())?;
    let c = positive_coefficients(t)?;
    let mut avg = vec![0.0; x.len()];
    let lse = weighted_mean_into(dataset, &c, x, &mut avg)?;
    let d = x.len() as f64;
    let log_scale =
        lse - (dataset.len() as f64).ln() - 0.5 * d * (LN_2PI + c.variance().ln());
    let scale = log_scale.exp();
    avg.iter_mut().for_each(|a| *a *= scale);
    Ok(avg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ou::{conditional_score, coefficients, transition_log_density};

    fn pair() -> Dataset {
        Dataset::from_points(&[vec![1.0], vec![-1.0]]).unwrap()
    }

    #[test]
    fn marginal_examples() {
        let target = IsotropicGaussianTarget::new(vec![-5.0, 5.0], 10.0).unwrap();
        let (m, v) = gaussian_marginal(&target, std::f64::consts::LN_2).unwrap();
        assert!((m[0] + 2.5).abs() < 1e-12 && (m[1] - 2.5).abs() < 1e-12);
        assert!((v - 3.25).abs() < 1e-12);
        let (m, v) = gaussian_marginal(&target, 40.0).unwrap();
        assert!(m.iter().all(|x| x.abs() < 1e-15) && (v - 1.0).abs() < 1e-15);
        let (m, v) = gaussian_marginal(&target, 1e-12).unwrap();
        assert!((m[0] + 5.0).abs() < 1e-10 && (v - 10.0).abs() < 1e-9);
        assert!(IsotropicGaussianTarget::new(vec![0.0], 0.0).is_err());
    }

    #[test]
    fn exact_score_example() {
        let target = IsotropicGaussianTarget::new(vec![-5.0, 5.0], 10.0).unwrap();
        let s = exact_gaussian_score(&target)
            .eval(std::f64::consts::LN_2, &[0.0, 0.0])
            .unwrap();
        assert!((s[0] + 2.5 / 3.25).abs() < 1e-12);
        assert!((s[1] - 2.5 / 3.25).abs() < 1e-12);
        let c = coefficients(0.8).unwrap();
        let at_mean = [-5.0 * c.mu, 5.0 * c.mu];
        let s = exact_gaussian_score(&target).eval(0.8, &at_mean).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(
            exact_gaussian_score(&target).eval(0.0, &[0.0, 0.0]),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn softmax_weight_cases() {
        let one = Dataset::from_points(&[vec![0.3, 0.1]]).unwrap();
        assert_eq!(softmax_weights(&one, 0.5, &[9.0, 9.0]).unwrap(), vec![1.0]);
        let w = softmax_weights(&pair(), 0.7, &[0.0]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);

        let ds = Dataset::from_points(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let w = softmax_weights(&ds, 1e-4, &[0.9, 0.2]).unwrap();
        // exact log-kernel comparison: index 1 is nearest after scaling
        assert!(w[1] > 1.0 - 1e-12, "{w:?}");
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_score_single_point_collapses() {
        let y = vec![0.7, -1.1, 2.0];
        let ds = Dataset::from_points(std::slice::from_ref(&y)).unwrap();
        let s = empirical_optimal_score(&ds);
        for &t in &[0.01, 0.3, 2.0] {
            let x = [0.2, 0.5, -0.4];
            let a = s.eval(t, &x).unwrap();
            let b = conditional_score(&x, &y, t).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn empirical_score_symmetric_pair() {
        let s = empirical_optimal_score(&pair()).eval(0.4, &[0.0]).unwrap();
        assert_eq!(s[0], 0.0);
        assert!(matches!(
            empirical_optimal_score(&pair()).eval(0.0, &[0.0]),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn empirical_score_far_from_data_stays_finite() {
        // every log-kernel is below −745 in absolute terms
        let ds = Dataset::from_points(&[vec![0.0], vec![0.5]]).unwrap();
        let s = empirical_optimal_score(&ds).eval(1e-3, &[50.0]).unwrap();
        assert!(s[0].is_finite());
        let lp = empirical_mixture_log_density(&ds, 1e-3, &[50.0]).unwrap();
        assert!(lp.is_finite() && lp < -1e5);
    }

    #[test]
    fn mixture_density_single_point() {
        let y = [1.0, 2.0];
        let ds = Dataset::from_points(&[y.to_vec()]).unwrap();
        let x = [0.3, -0.2];
        let a = empirical_mixture_log_density(&ds, 0.6, &x).unwrap();
        let b = transition_log_density(&x, &y, 0.6).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn mixture_density_dominant_component() {
        let ds = Dataset::from_points(&[vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]]).unwrap();
        let t = 0.01;
        let c = coefficients(t).unwrap();
        let x = [5.0 * c.mu, 0.0];
        let want = (1.0f64 / 3.0).ln() - (2.0 * std::f64::consts::PI * c.variance()).ln();
        let got = empirical_mixture_log_density(&ds, t, &x).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn convolution_cases() {
        let (m, v) = gaussian_convolution(&[0.0], 1.0, &[0.0], 1.0).unwrap();
        assert_eq!((m[0], v), (0.0, 2.0));
        let (m, v) = gaussian_convolution(&[1.0, 2.0], 3.0, &[0.5, -1.0], 1e-300).unwrap();
        assert_eq!(m, vec![1.5, 1.0]);
        assert_eq!(v, 3.0);
        assert!(gaussian_convolution(&[0.0], 0.0, &[0.0], 1.0).is_err());
        assert!(gaussian_convolution(&[0.0], 1.0, &[0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn weighted_average_equal_points() {
        let ds = Dataset::from_points(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let b = weighted_average_bounds_check(&ds, 0.3, &[0.0, 0.0]).unwrap();
        assert!((b.lhs - 5.0).abs() < 1e-12);
        assert!((b.lhs - b.bound_radius).abs() < 1e-12);
        let b = weighted_average_bounds_check(&pair(), 0.3, &[0.0]).unwrap();
        assert_eq!(b.lhs, 0.0);
        assert!(b.holds(1e-12));
    }

    #[test]
    fn lower_bound_holds_at_a_point() {
        let ds = Dataset::from_points(&[vec![0.3, -0.2], vec![1.0, 1.0]]).unwrap();
        let t = 0.5;
        let lambda = 0.5 / coefficients(t).unwrap().mu;
        let x = [0.4, 0.1];
        let lb = mixture_log_density_lower_bound(&ds, t, &x, lambda).unwrap();
        assert!(lb <= empirical_mixture_log_density(&ds, t, &x).unwrap());
    }
}
