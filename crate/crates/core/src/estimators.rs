//! Monte-Carlo and quadrature estimators.
//!
//! Every Monte-Carlo routine takes a seed and draws sample `m` from the
//! stream `(seed, [tag, m])`; two calls with the same seed therefore see the
//! same randomness, which is what the paired loss comparisons rely on.
//! Per-sample values are gathered in index order and reduced sequentially,
//! so results do not depend on the rayon thread count.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::kde::{kde_log_density, KdeModel};
use crate::math::{dist_sq, log_gauss_iso, mean_and_se, norm_sq, quantile_sorted};
use crate::ou::{coefficients, positive_coefficients};
use crate::rng::{self, fill_standard_normal, StreamRng};
use crate::samplers::{InitialLaw, SampleBatch};
use crate::scores::{
    empirical_optimal_score, ensemble_average, exact_gaussian_score, IsotropicGaussianTarget,
    ScoreField,
};

const CSM_STREAM: u64 = 0xE5_0001;
const SM_STREAM: u64 = 0xE5_0002;
const SCORE_ERROR_DATA: u64 = 0xE5_0003;
const SCORE_ERROR_X: u64 = 0xE5_0004;
const TV_STREAM: u64 = 0xE5_0005;
const PERMUTATION_STREAM: u64 = 0xE5_0006;
const ENSEMBLE_STREAM: u64 = 0xE5_0007;

/// A Monte-Carlo estimate with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub value: f64,
    pub std_error: f64,
    pub replicates: usize,
    pub parameters: BTreeMap<String, Value>,
}

impl EstimateReport {
    fn from_samples(values: &[f64], parameters: BTreeMap<String, Value>) -> Self {
        let (value, std_error) = mean_and_se(values);
        Self {
            value,
            std_error,
            replicates: values.len(),
            parameters,
        }
    }

    /// `value ≤ bound + k·SE`.
    pub fn within(&self, bound: f64, k: f64) -> bool {
        self.value <= bound + k * self.std_error
    }
}

fn params(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
    pairs
        .iter()
        .map(|(k, v)| ((*k).to_string(), v.clone()))
        .collect()
}

fn law_tag(law: &InitialLaw<'_>) -> Value {
    match law {
        InitialLaw::Empirical(ds) => json!({"empirical": ds.len()}),
        InitialLaw::Gaussian(g) => json!({"gaussian": {"mean": g.mean(), "variance": g.variance()}}),
    }
}

fn check_samples(mc_samples: usize) -> Result<()> {
    if mc_samples == 0 {
        Err(Error::domain("Monte-Carlo sample count must be positive"))
    } else {
        Ok(())
    }
}

/// Per-draw conditional score-matching residual `‖s(t,x) − u(t,x|y)‖²` with
/// `y ~ law`, `x ~ p_t(·|y)`. `u(t,x|y) = −Z/σ(t)` for `x = μy + σZ`.
fn csm_terms<S: ScoreField + ?Sized>(
    s: &S,
    law: InitialLaw<'_>,
    t: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_samples(mc_samples)?;
    check_dim(law.dim(), s.dim())?;
    let c = positive_coefficients(t)?;
    let d = law.dim();
    (0..mc_samples)
        .into_par_iter()
        .map(|m| {
            let mut rng = rng::stream(seed, &[CSM_STREAM, m as u64]);
            let y = law.sample(&mut rng);
            let mut z = vec![0.0; d];
            fill_standard_normal(&mut rng, &mut z);
            let x: Vec<f64> = y.iter().zip(&z).map(|(yi, zi)| c.mu * yi + c.sigma * zi).collect();
            let sv = s.eval(t, &x)?;
            Ok(sv
                .iter()
                .zip(&z)
                .map(|(si, zi)| {
                    let r = si + zi / c.sigma;
                    r * r
                })
                .sum())
        })
        .collect()
}

/// `L_CSM(s) = E_{y, x|y} ‖s(t,x) − u(t,x|y)‖²` at fixed `t`. With
/// [`InitialLaw::Empirical`] this is the empirical-risk objective.
pub fn csm_loss<S: ScoreField + ?Sized>(
    s: &S,
    law: InitialLaw<'_>,
    t: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<EstimateReport> {
    let terms = csm_terms(s, law, t, mc_samples, seed)?;
    Ok(EstimateReport::from_samples(
        &terms,
        params(&[
            ("loss", json!("csm")),
            ("t", json!(t)),
            ("mc_samples", json!(mc_samples)),
            ("seed", json!(seed)),
            ("law", law_tag(&law)),
            ("score", json!(s.kind().to_string())),
        ]),
    ))
}

/// `L_CSM(s1) − L_CSM(s2)` estimated from shared draws.
pub fn csm_loss_difference<S1: ScoreField + ?Sized, S2: ScoreField + ?Sized>(
    s1: &S1,
    s2: &S2,
    law: InitialLaw<'_>,
    t: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<EstimateReport> {
    let a = csm_terms(s1, law, t, mc_samples, seed)?;
    let b = csm_terms(s2, law, t, mc_samples, seed)?;
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    Ok(EstimateReport::from_samples(
        &diff,
        params(&[
            ("loss", json!("csm-difference")),
            ("t", json!(t)),
            ("mc_samples", json!(mc_samples)),
            ("seed", json!(seed)),
            ("law", law_tag(&law)),
        ]),
    ))
}

fn sm_terms<S: ScoreField + ?Sized>(
    s: &S,
    law: InitialLaw<'_>,
    t: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_samples(mc_samples)?;
    let target = match law {
        InitialLaw::Gaussian(g) => g,
        InitialLaw::Empirical(_) => {
            return Err(Error::domain(
                "score-matching loss needs a Gaussian target with a known exact score",
            ))
        }
    };
    check_dim(target.dim(), s.dim())?;
    positive_coefficients(t)?;
    let exact = exact_gaussian_score(target);
    (0..mc_samples)
        .into_par_iter()
        .map(|m| {
            let mut rng = rng::stream(seed, &[SM_STREAM, m as u64]);
            let x = target.sample_marginal(t, &mut rng)?;
            let sv = s.eval(t, &x)?;
            let uv = exact.eval(t, &x)?;
            Ok(dist_sq(&sv, &uv))
        })
        .collect()
}

/// `L_SM(s) = E_{x ~ p_t} ‖s(t,x) − u(t,x)‖²` for a Gaussian target.
pub fn sm_loss<S: ScoreField + ?Sized>(
    s: &S,
    law: InitialLaw<'_>,
    t: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<EstimateReport> {
    let terms = sm_terms(s, law, t, mc_samples, seed)?;
    Ok(EstimateReport::from_samples(
        &terms,
        params(&[
            ("loss", json!("sm")),
            ("t", json!(t)),
            ("mc_samples", json!(mc_samples)),
            ("seed", json!(seed)),
            ("law", law_tag(&law)),
            ("score", json!(s.kind().to_string())),
        ]),
    ))
}

/// `L_SM(s1) − L_SM(s2)` estimated from shared draws.
pub fn sm_loss_difference<S1: ScoreField + ?Sized, S2: ScoreField + ?Sized>(
    s1: &S1,
    s2: &S2,
    law: InitialLaw<'_>,
    t: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<EstimateReport> {
    let a = sm_terms(s1, law, t, mc_samples, seed)?;
    let b = sm_terms(s2, law, t, mc_samples, seed)?;
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    Ok(EstimateReport::from_samples(
        &diff,
        params(&[
            ("loss", json!("sm-difference")),
            ("t", json!(t)),
            ("mc_samples", json!(mc_samples)),
            ("seed", json!(seed)),
            ("law", law_tag(&law)),
        ]),
    ))
}

/// Settings of the score-approximation-error experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreErrorParams {
    /// Training set size `N`.
    pub train_size: usize,
    pub delta: f64,
    pub horizon: f64,
    pub grid_step: f64,
    /// Draws `x ~ p_t` per grid time (`M`).
    pub samples_per_time: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl ScoreErrorParams {
    pub fn reference_defaults(train_size: usize, seed: u64) -> Self {
        Self {
            train_size,
            delta: 0.02,
            horizon: 5.0,
            grid_step: 0.02,
            samples_per_time: 1000,
            repetitions: 10,
            seed,
        }
    }

    /// `t_k = δ + k·h` for `k = 0, 1, ...` while `t_k ≤ T`.
    pub fn time_grid(&self) -> Result<Vec<f64>> {
        if !(self.delta > 0.0 && self.delta < self.horizon) {
            return Err(Error::domain(format!(
                "need 0 < delta < T, got delta = {}, T = {}",
                self.delta, self.horizon
            )));
        }
        if !(self.grid_step > 0.0) || !self.grid_step.is_finite() {
            return Err(Error::domain(format!(
                "grid step must be positive, got {}",
                self.grid_step
            )));
        }
        let k = ((self.horizon - self.delta) / self.grid_step + 1e-9).floor() as usize + 1;
        Ok((0..k)
            .map(|i| self.delta + i as f64 * self.grid_step)
            .collect())
    }
}

/// Average `‖s^N(t_k, x) − u(t_k, x)‖²` over a time grid and `x ~ p_{t_k}`,
/// repeated over fresh datasets; value and SE are over repetitions.
pub fn score_error_protocol(
    target: &IsotropicGaussianTarget,
    p: &ScoreErrorParams,
) -> Result<EstimateReport> {
    score_error_protocol_with(target, p, |ds| Box::new(empirical_optimal_score(ds)))
}

/// [`score_error_protocol`] with the fitted field supplied by `fit`.
pub fn score_error_protocol_with<F>(
    target: &IsotropicGaussianTarget,
    p: &ScoreErrorParams,
    fit: F,
) -> Result<EstimateReport>
where
    F: for<'a> Fn(&'a Dataset) -> Box<dyn ScoreField + 'a>,
{
    if p.train_size == 0 || p.samples_per_time == 0 || p.repetitions == 0 {
        return Err(Error::domain(
            "train size, samples per time and repetitions must be positive",
        ));
    }
    let grid = p.time_grid()?;
    let exact = exact_gaussian_score(target);
    let d = target.dim();
    let mut per_rep = Vec::with_capacity(p.repetitions);
    for r in 0..p.repetitions {
        let mut rng = rng::stream(p.seed, &[SCORE_ERROR_DATA, r as u64]);
        let ds = Dataset::sample_gaussian(target, p.train_size, &mut rng)?;
        let field = fit(&ds);
        let per_time: Vec<f64> = grid
            .par_iter()
            .enumerate()
            .map(|(k, &t)| -> Result<f64> {
                let mut rng = rng::stream(p.seed, &[SCORE_ERROR_X, r as u64, k as u64]);
                let mut s = vec![0.0; d];
                let mut u = vec![0.0; d];
                let mut acc = 0.0;
                for _ in 0..p.samples_per_time {
                    let x = target.sample_marginal(t, &mut rng)?;
                    field.eval_into(t, &x, &mut s)?;
                    exact.eval_into(t, &x, &mut u)?;
                    acc += dist_sq(&s, &u);
                }
                Ok(acc / p.samples_per_time as f64)
            })
            .collect::<Result<_>>()?;
        per_rep.push(per_time.iter().sum::<f64>() / per_time.len() as f64);
    }
    Ok(EstimateReport::from_samples(
        &per_rep,
        params(&[
            ("train_size", json!(p.train_size)),
            ("delta", json!(p.delta)),
            ("horizon", json!(p.horizon)),
            ("grid_step", json!(p.grid_step)),
            ("grid_points", json!(grid.len())),
            ("samples_per_time", json!(p.samples_per_time)),
            ("repetitions", json!(p.repetitions)),
            ("seed", json!(p.seed)),
        ]),
    ))
}

/// Covariance of a Gaussian, isotropic or diagonal.
#[derive(Debug, Clone, PartialEq)]
pub enum CovSpec {
    Isotropic(f64),
    Diagonal(Vec<f64>),
}

impl CovSpec {
    fn diagonal(&self, d: usize) -> Result<Vec<f64>> {
        let diag = match self {
            CovSpec::Isotropic(v) => vec![*v; d],
            CovSpec::Diagonal(v) => {
                check_dim(d, v.len())?;
                v.clone()
            }
        };
        if diag.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::domain("covariance entries must be positive"));
        }
        Ok(diag)
    }
}

/// Closed-form `KL(N(mean_p, cov_p) ‖ N(mean_q, cov_q))` for diagonal
/// covariances.
pub fn kl_gaussians(
    mean_p: &[f64],
    cov_p: &CovSpec,
    mean_q: &[f64],
    cov_q: &CovSpec,
) -> Result<f64> {
    let d = mean_p.len();
    check_dim(d, mean_q.len())?;
    let p = cov_p.diagonal(d)?;
    let q = cov_q.diagonal(d)?;
    let mut acc = -(d as f64);
    for i in 0..d {
        let delta = mean_p[i] - mean_q[i];
        acc += (q[i] / p[i]).ln() + delta * delta / q[i] + p[i] / q[i];
    }
    Ok(0.5 * acc)
}

/// Monte-Carlo total variation `½∫|f − g|`, sampling `x` from the equal
/// mixture `m = (f + g)/2` via `sample_mixture`. Each term is
/// `|f − g| / (f + g) = |tanh((log f − log g)/2)|`, so the estimate lies in
/// `[0, 1]`.
pub fn tv_mc<F, G, M>(
    log_f: F,
    log_g: G,
    sample_mixture: M,
    mc_samples: usize,
    seed: u64,
) -> Result<EstimateReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
    M: Fn(&mut StreamRng) -> Vec<f64> + Sync,
{
    check_samples(mc_samples)?;
    let terms: Vec<f64> = (0..mc_samples)
        .into_par_iter()
        .map(|m| {
            let mut rng = rng::stream(seed, &[TV_STREAM, m as u64]);
            let x = sample_mixture(&mut rng);
            let (lf, lg) = (log_f(&x), log_g(&x));
            if lf == lg {
                0.0
            } else {
                (0.5 * (lf - lg)).tanh().abs()
            }
        })
        .collect();
    Ok(EstimateReport::from_samples(
        &terms,
        params(&[
            ("estimator", json!("tv-mc")),
            ("mc_samples", json!(mc_samples)),
            ("seed", json!(seed)),
        ]),
    ))
}

/// Sampler for the equal-weight mixture of two samplers.
pub fn equal_mixture<A, B>(a: A, b: B) -> impl Fn(&mut StreamRng) -> Vec<f64> + Sync
where
    A: Fn(&mut StreamRng) -> Vec<f64> + Sync,
    B: Fn(&mut StreamRng) -> Vec<f64> + Sync,
{
    move |rng: &mut StreamRng| {
        if rand::Rng::random_bool(rng, 0.5) {
            a(rng)
        } else {
            b(rng)
        }
    }
}

/// Trapezoid-rule `½∫|f − g|` over `[lo, hi]` for one-dimensional densities.
pub fn tv_quadrature_1d<F, G>(log_f: F, log_g: G, range: (f64, f64), grid_points: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let (lo, hi) = range;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::domain(format!("invalid quadrature range [{lo}, {hi}]")));
    }
    if grid_points < 2 {
        return Err(Error::domain("quadrature needs at least two grid points"));
    }
    let h = (hi - lo) / (grid_points - 1) as f64;
    let integrand = |x: f64| (log_f(x).exp() - log_g(x).exp()).abs();
    let mut acc = 0.5 * (integrand(lo) + integrand(hi));
    for i in 1..grid_points - 1 {
        acc += integrand(lo + i as f64 * h);
    }
    Ok(0.5 * acc * h)
}

pub const DEFAULT_QUADRATURE_POINTS: usize = 100_000;

/// Result of a two-sample energy-distance permutation test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyTest {
    /// `nm/(n+m) · (2E|X−Y| − E|X−X'| − E|Y−Y'|)` with V-statistic means.
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
}

impl EnergyTest {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Sums of pairwise distances within the first group, within the second,
/// and across, for a labelling of the pooled sample.
fn energy_statistic(dist: &[f64], total: usize, in_a: &[bool]) -> f64 {
    let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
    for i in 0..total {
        let row = &dist[i * total..(i + 1) * total];
        let ai = in_a[i];
        for (j, &dij) in row.iter().enumerate() {
            match (ai, in_a[j]) {
                (true, true) => aa += dij,
                (false, false) => bb += dij,
                (true, false) => ab += dij,
                (false, true) => {}
            }
        }
    }
    let n = in_a.iter().filter(|&&a| a).count() as f64;
    let m = total as f64 - n;
    let e = 2.0 * ab / (n * m) - aa / (n * n) - bb / (m * m);
    n * m / (n + m) * e
}

pub fn energy_distance_test(
    a: &SampleBatch,
    b: &SampleBatch,
    permutations: usize,
    seed: u64,
) -> Result<EnergyTest> {
    check_dim(a.dim(), b.dim())?;
    if permutations < 200 {
        return Err(Error::domain(format!(
            "energy test needs at least 200 permutations, got {permutations}"
        )));
    }
    let pooled: Vec<&[f64]> = a.iter().chain(b.iter()).collect();
    let total = pooled.len();
    let mut dist = vec![0.0; total * total];
    dist.par_chunks_mut(total).enumerate().for_each(|(i, row)| {
        for (j, r) in row.iter_mut().enumerate() {
            *r = dist_sq(pooled[i], pooled[j]).sqrt();
        }
    });
    let base: Vec<bool> = (0..total).map(|i| i < a.len()).collect();
    let observed = energy_statistic(&dist, total, &base);
    let exceed: usize = (0..permutations)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng::stream(seed, &[PERMUTATION_STREAM, p as u64]);
            let mut l = base.clone();
            l.shuffle(&mut rng);
            let s = energy_statistic(&dist, total, &l);
            usize::from(s >= observed - 1e-12 * observed.abs())
        })
        .sum();
    Ok(EnergyTest {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        permutations,
    })
}

/// Nearest-training-point distances of a generated batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NnDistanceStats {
    pub distances: Vec<f64>,
    /// Index of the nearest training point (lowest index on ties).
    pub nearest: Vec<usize>,
    pub median: f64,
}

impl NnDistanceStats {
    pub fn fraction_below(&self, r: f64) -> f64 {
        self.distances.iter().filter(|&&d| d < r).count() as f64 / self.distances.len() as f64
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let mut sorted = self.distances.clone();
        sorted.sort_by(f64::total_cmp);
        quantile_sorted(&sorted, q)
    }
}

pub fn nn_distance_stats(generated: &SampleBatch, dataset: &Dataset) -> Result<NnDistanceStats> {
    check_dim(dataset.dim(), generated.dim())?;
    if generated.is_empty() || dataset.is_empty() {
        return Err(Error::domain("nearest-neighbour statistics need non-empty inputs"));
    }
    let (distances, nearest): (Vec<f64>, Vec<usize>) = generated
        .as_flat()
        .par_chunks(generated.dim())
        .map(|x| {
            let mut best = (f64::INFINITY, 0);
            for (i, y) in dataset.iter().enumerate() {
                let d2 = dist_sq(x, y);
                if d2 < best.0 {
                    best = (d2, i);
                }
            }
            (best.0.sqrt(), best.1)
        })
        .unzip();
    let mut sorted = distances.clone();
    sorted.sort_by(f64::total_cmp);
    let median = quantile_sorted(&sorted, 0.5);
    Ok(NnDistanceStats {
        distances,
        nearest,
        median,
    })
}

/// Estimates indexed by training-set size, with a fitted log-log line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorCurve {
    pub entries: Vec<(usize, EstimateReport)>,
    pub fitted_slope: Option<f64>,
    pub fitted_intercept: Option<f64>,
}

impl ErrorCurve {
    pub fn new(entries: Vec<(usize, EstimateReport)>) -> Result<Self> {
        if entries.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::domain("error curve sizes must be strictly increasing"));
        }
        let mut curve = Self {
            entries,
            fitted_slope: None,
            fitted_intercept: None,
        };
        if curve.entries.len() >= 3 {
            let (s, i) = loglog_slope(&curve)?;
            curve.fitted_slope = Some(s);
            curve.fitted_intercept = Some(i);
        }
        Ok(curve)
    }
}

/// Least-squares fit of `log(value)` against `log(N)`.
pub fn loglog_slope(curve: &ErrorCurve) -> Result<(f64, f64)> {
    let xs: Vec<f64> = curve.entries.iter().map(|(n, _)| *n as f64).collect();
    let ys: Vec<f64> = curve.entries.iter().map(|(_, e)| e.value).collect();
    fit_loglog(&xs, &ys)
}

/// Least-squares `(slope, intercept)` of `log y = slope·log x + intercept`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::domain("log-log fit needs at least three points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::domain("log-log fit needs positive values"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Total variance `E‖v − E v‖²` of `v_t^N(x) = (1/N) Σ y_i p_t(x|y_i)` over
/// `datasets` independent training sets of size `n` drawn from `target`.
/// The SE uses the Gaussian approximation `var·√(2/(R−1))`.
pub fn ensemble_average_variance(
    target: &IsotropicGaussianTarget,
    n: usize,
    t: f64,
    x: &[f64],
    datasets: usize,
    seed: u64,
) -> Result<EstimateReport> {
    if datasets < 2 || n == 0 {
        return Err(Error::domain("need at least two datasets of positive size"));
    }
    let vs: Vec<Vec<f64>> = (0..datasets)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, &[ENSEMBLE_STREAM, n as u64, r as u64]);
            let ds = Dataset::sample_gaussian(target, n, &mut rng)?;
            ensemble_average(&ds, t, x)
        })
        .collect::<Result<_>>()?;
    let d = x.len();
    let mut mean = vec![0.0; d];
    for v in &vs {
        for (m, vi) in mean.iter_mut().zip(v) {
            *m += vi / datasets as f64;
        }
    }
    let var = vs.iter().map(|v| dist_sq(v, &mean)).sum::<f64>() / (datasets - 1) as f64;
    Ok(EstimateReport {
        value: var,
        std_error: var * (2.0 / (datasets - 1) as f64).sqrt(),
        replicates: datasets,
        parameters: params(&[
            ("train_size", json!(n)),
            ("t", json!(t)),
            ("x", json!(x)),
            ("seed", json!(seed)),
        ]),
    })
}

/// `TV(q_{T−δ}, p̂^γ)` with `γ = σ(δ)`: the diffused empirical mixture
/// (centers `μ(δ) y_i`) against the plain KDE with the same bandwidth.
pub fn tv_diffused_vs_kde(
    dataset: &Dataset,
    delta: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<EstimateReport> {
    let diffused = KdeModel::diffused(dataset.clone(), delta)?;
    let plain = KdeModel::plain(dataset.clone(), diffused.bandwidth())?;
    let d = dataset.dim();
    let draw = |model: &KdeModel| {
        let model = model.clone();
        move |rng: &mut StreamRng| {
            let mut x = vec![0.0; d];
            model.sample_one(rng, &mut x);
            x
        }
    };
    let mut report = tv_mc(
        |x| kde_log_density(&diffused, x).unwrap_or(f64::NEG_INFINITY),
        |x| kde_log_density(&plain, x).unwrap_or(f64::NEG_INFINITY),
        equal_mixture(draw(&diffused), draw(&plain)),
        mc_samples,
        seed,
    )?;
    report.parameters.insert("delta".into(), json!(delta));
    report
        .parameters
        .insert("quantity".into(), json!("tv(diffused-mixture, kde)"));
    Ok(report)
}

/// `TV(p_T, π^d)`: the forward law at time `T` started from the empirical
/// measure, against the standard Gaussian.
pub fn tv_forward_vs_standard(
    dataset: &Dataset,
    horizon: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<EstimateReport> {
    let forward = KdeModel::diffused(dataset.clone(), horizon)?;
    let d = dataset.dim();
    let fwd = forward.clone();
    let mut report = tv_mc(
        |x| kde_log_density(&forward, x).unwrap_or(f64::NEG_INFINITY),
        |x| log_gauss_iso(d, 1.0, norm_sq(x)),
        equal_mixture(
            move |rng: &mut StreamRng| {
                let mut x = vec![0.0; d];
                fwd.sample_one(rng, &mut x);
                x
            },
            move |rng: &mut StreamRng| {
                let mut x = vec![0.0; d];
                fill_standard_normal(rng, &mut x);
                x
            },
        ),
        mc_samples,
        seed,
    )?;
    report.parameters.insert("horizon".into(), json!(horizon));
    report
        .parameters
        .insert("quantity".into(), json!("tv(forward-terminal, standard-normal)"));
    Ok(report)
}

/// `(1/N) Σ_i KL(p_t(·|y_i) ‖ π^d)` in closed form:
/// `½[−d log σ(t)² − d + dσ(t)² + e^{−2t} ‖y_i‖²]` averaged over the data.
pub fn forward_kl_to_standard(dataset: &Dataset, t: f64) -> Result<f64> {
    let c = coefficients(t)?;
    let var = c.variance();
    let d = dataset.dim() as f64;
    Ok(0.5 * (-d * var.ln() - d + d * var + c.mu * c.mu * dataset.second_moment()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::zero_score;

    #[test]
    fn kl_basic_values() {
        let z = kl_gaussians(&[0.3, 1.0], &CovSpec::Isotropic(2.0), &[0.3, 1.0], &CovSpec::Isotropic(2.0))
            .unwrap();
        assert_eq!(z, 0.0);
        let k = kl_gaussians(&[1.0], &CovSpec::Isotropic(1.0), &[0.0], &CovSpec::Isotropic(1.0)).unwrap();
        assert!((k - 0.5).abs() < 1e-15);
        assert!(kl_gaussians(&[0.0], &CovSpec::Isotropic(0.0), &[0.0], &CovSpec::Isotropic(1.0)).is_err());
        assert!(kl_gaussians(&[0.0], &CovSpec::Diagonal(vec![1.0, 1.0]), &[0.0], &CovSpec::Isotropic(1.0))
            .is_err());
    }

    #[test]
    fn slope_of_power_laws() {
        let ns = [100.0, 200.0, 500.0, 1000.0, 2000.0];
        let inv: Vec<f64> = ns.iter().map(|n| 3.0 / n).collect();
        let (s, i) = fit_loglog(&ns, &inv).unwrap();
        assert!((s + 1.0).abs() < 1e-12);
        assert!((i - 3f64.ln()).abs() < 1e-10);
        let sqrt: Vec<f64> = ns.iter().map(|n| 3.0 / n.sqrt()).collect();
        assert!((fit_loglog(&ns, &sqrt).unwrap().0 + 0.5).abs() < 1e-12);
        assert!(fit_loglog(&ns[..2], &inv[..2]).is_err());
        assert!(fit_loglog(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn error_curve_requires_increasing_sizes() {
        let r = EstimateReport::from_samples(&[1.0], BTreeMap::new());
        assert!(ErrorCurve::new(vec![(10, r.clone()), (10, r.clone())]).is_err());
        let single = ErrorCurve::new(vec![(10, r)]).unwrap();
        assert!(single.fitted_slope.is_none());
    }

    #[test]
    fn quadrature_identical_is_zero() {
        let f = |x: f64| -0.5 * x * x;
        assert_eq!(tv_quadrature_1d(f, f, (-10.0, 10.0), 1001).unwrap(), 0.0);
        assert!(tv_quadrature_1d(f, f, (1.0, -1.0), 1001).is_err());
    }

    #[test]
    fn tv_mc_identical_is_zero() {
        let lf = |x: &[f64]| -0.5 * x[0] * x[0];
        let r = tv_mc(lf, lf, |rng: &mut StreamRng| vec![crate::rng::standard_normal(rng)], 1000, 1)
            .unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn energy_identical_batches() {
        let pts: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = SampleBatch::from_flat(2, pts, "a").unwrap();
        let t = energy_distance_test(&a, &a, 200, 0).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
        let b = SampleBatch::from_flat(1, vec![0.0; 3], "b").unwrap();
        assert!(energy_distance_test(&a, &b, 200, 0).is_err());
        assert!(energy_distance_test(&a, &a, 10, 0).is_err());
    }

    #[test]
    fn nn_distance_ties_and_zero() {
        let ds = Dataset::from_points(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![5.0, 5.0]]).unwrap();
        let g = SampleBatch::from_flat(2, vec![0.0, 0.0, 5.0, 5.0], "g").unwrap();
        let s = nn_distance_stats(&g, &ds).unwrap();
        assert_eq!(s.nearest, vec![0, 2]);
        assert_eq!(s.distances, vec![1.0, 0.0]);
        assert_eq!(s.fraction_below(0.5), 0.5);
    }

    #[test]
    fn csm_loss_zero_for_matching_conditional() {
        let y = vec![0.5, -0.25];
        let ds = Dataset::from_points(std::slice::from_ref(&y)).unwrap();
        let s = crate::scores::ConditionalScore::new(y);
        let r = csm_loss(&s, InitialLaw::Empirical(&ds), 0.3, 500, 2).unwrap();
        assert!(r.value < 1e-20, "{}", r.value);
    }

    #[test]
    fn sm_loss_rejects_empirical_law() {
        let ds = Dataset::from_points(&[vec![0.0]]).unwrap();
        assert!(sm_loss(&zero_score(1), InitialLaw::Empirical(&ds), 0.5, 10, 0).is_err());
    }

    #[test]
    fn score_error_grid_matches_protocol() {
        let p = ScoreErrorParams::reference_defaults(100, 0);
        let g = p.time_grid().unwrap();
        assert_eq!(g.len(), 250);
        assert_eq!(g[0], 0.02);
        assert!((g[249] - 5.0).abs() < 1e-12);
        let mut bad = p.clone();
        bad.delta = 6.0;
        assert!(bad.time_grid().is_err());
    }

    #[test]
    fn forward_kl_matches_generic_formula() {
        let ds = Dataset::from_points(&[vec![1.0, -2.0]]).unwrap();
        let t = 0.8;
        let c = coefficients(t).unwrap();
        let generic = kl_gaussians(
            &[c.mu * 1.0, c.mu * -2.0],
            &CovSpec::Isotropic(c.variance()),
            &[0.0, 0.0],
            &CovSpec::Isotropic(1.0),
        )
        .unwrap();
        assert!((forward_kl_to_standard(&ds, t).unwrap() - generic).abs() < 1e-12);
    }
}
