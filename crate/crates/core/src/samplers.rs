//! Backward (generation) SDE integration.
//!
//! The backward process `dX = (X + 2 s(T − t, X)) dt + √2 dB` is integrated
//! with Euler–Maruyama in forward sampler time `t ∈ [0, T − δ]`, starting
//! from standard normal noise:
//!
//! ```text
//! X_{n} = X_{n−1} (1 + h_n) + 2 h_n s(T − t_{n−1}, X_{n−1}) + √(2 h_n) Z_n,   h_n = t_n − t_{n−1}
//! ```
//!
//! Integration stops at the largest grid point `t_n ≤ T − δ`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::ou::coefficients;
use crate::rng::{self, fill_standard_normal};
use crate::scores::{IsotropicGaussianTarget, ScoreField};

/// Label mixed into per-trajectory stream paths.
const TRAJECTORY_STREAM: u64 = 0xB4C4_0001;
const FORWARD_STREAM: u64 = 0xB4C4_0002;

/// Relative slack when comparing grid points against `T − δ`.
const GRID_EPS: f64 = 1e-9;

/// Time discretization of `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridSpec {
    /// Uniform grid with `K = ceil(T / h)` steps; the last step may be short.
    Step(f64),
    /// Explicit grid `0 = t_0 < t_1 < ... < t_K = T`.
    Points(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub horizon: f64,
    pub grid: GridSpec,
    pub early_stop: f64,
    pub seed: u64,
    /// Only for deterministic diagnostics; generation always uses noise.
    #[serde(default = "default_true")]
    pub noise_enabled: bool,
}

fn default_true() -> bool {
    true
}

impl SamplerConfig {
    pub fn uniform(horizon: f64, step: f64, early_stop: f64, seed: u64) -> Self {
        Self {
            horizon,
            grid: GridSpec::Step(step),
            early_stop,
            seed,
            noise_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::domain(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.early_stop >= 0.0 && self.early_stop < self.horizon) {
            return Err(Error::domain(format!(
                "early stop must lie in [0, {}), got {}",
                self.horizon, self.early_stop
            )));
        }
        self.time_grid().map(|_| ())
    }

    /// The grid `t_0 = 0 < ... < t_K = T`.
    pub fn time_grid(&self) -> Result<Vec<f64>> {
        let t_end = self.horizon;
        match &self.grid {
            GridSpec::Step(h) => {
                if !(*h > 0.0) || !h.is_finite() {
                    return Err(Error::domain(format!("step size must be positive, got {h}")));
                }
                let k = ((t_end / h) * (1.0 - GRID_EPS)).ceil().max(1.0) as usize;
                let mut grid: Vec<f64> = (0..k).map(|n| n as f64 * h).collect();
                grid.push(t_end);
                Ok(grid)
            }
            GridSpec::Points(points) => {
                if points.len() < 2 {
                    return Err(Error::domain("time grid needs at least two points"));
                }
                if points[0] != 0.0 {
                    return Err(Error::domain(format!(
                        "time grid must start at 0, starts at {}",
                        points[0]
                    )));
                }
                if let Some(i) = points.windows(2).position(|w| !(w[1] > w[0])) {
                    return Err(Error::domain(format!(
                        "time grid is not strictly increasing at index {}",
                        i + 1
                    )));
                }
                let last = *points.last().unwrap();
                if (last - t_end).abs() > GRID_EPS * t_end {
                    return Err(Error::domain(format!(
                        "time grid ends at {last}, horizon is {t_end}"
                    )));
                }
                Ok(points.clone())
            }
        }
    }

    /// Index of the largest grid point `≤ T − δ`.
    pub fn stop_index(&self, grid: &[f64]) -> usize {
        let stop = self.horizon - self.early_stop;
        let slack = GRID_EPS * self.horizon.max(1.0);
        grid.iter().rposition(|&t| t <= stop + slack).unwrap_or(0)
    }
}

/// Terminal points of a batch of trajectories, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    points: Vec<f64>,
    /// Starting points, when the batch came from the backward sampler.
    pub initial: Option<Vec<f64>>,
    pub config: Option<SamplerConfig>,
    /// What produced the batch (a score kind, `kde`, `mixture`, ...).
    pub descriptor: String,
    /// Gap between `T − δ` and the grid point where integration stopped.
    pub stop_gap: f64,
}

impl SampleBatch {
    pub fn from_flat(dim: usize, points: Vec<f64>, descriptor: impl Into<String>) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::domain(format!(
                "{} values do not form a non-empty batch of dimension {dim}",
                points.len()
            )));
        }
        Ok(Self {
            dim,
            points,
            initial: None,
            config: None,
            descriptor: descriptor.into(),
            stop_gap: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn initial_batch(&self) -> Option<SampleBatch> {
        self.initial.as_ref().map(|p| SampleBatch {
            dim: self.dim,
            points: p.clone(),
            initial: None,
            config: self.config.clone(),
            descriptor: format!("{}-initial", self.descriptor),
            stop_gap: 0.0,
        })
    }
}

/// Run one trajectory in place from `x` over `grid[..=stop]`. `noise` draws
/// come from `rng` only when `noise_enabled` is set.
pub fn integrate_trajectory<S: ScoreField + ?Sized, R: Rng + ?Sized>(
    score: &S,
    horizon: f64,
    grid: &[f64],
    stop: usize,
    noise_enabled: bool,
    x: &mut [f64],
    rng: &mut R,
) -> Result<()> {
    let d = x.len();
    let mut s = vec![0.0; d];
    let mut z = vec![0.0; d];
    for n in 1..=stop {
        let h = grid[n] - grid[n - 1];
        score
            .eval_into(horizon - grid[n - 1], x, &mut s)
            .map_err(|e| Error::Sampler {
                step: n,
                source: Box::new(e),
            })?;
        if noise_enabled {
            fill_standard_normal(rng, &mut z);
        }
        let amp = (2.0 * h).sqrt();
        for ((xi, si), zi) in x.iter_mut().zip(&s).zip(&z) {
            *xi = *xi * (1.0 + h) + 2.0 * h * si + amp * zi;
        }
    }
    Ok(())
}

/// Generate `count` samples by integrating the backward SDE with `score`.
///
/// Trajectory `i` draws its initial point and all increments from the stream
/// `(config.seed, [TRAJECTORY_STREAM, i])`, so results are independent of
/// `count` and of the thread layout.
pub fn backward_sample<S: ScoreField + ?Sized>(
    score: &S,
    config: &SamplerConfig,
    count: usize,
) -> Result<SampleBatch> {
    config.validate()?;
    if count == 0 {
        return Err(Error::domain("sample count must be positive"));
    }
    let grid = config.time_grid()?;
    let stop = config.stop_index(&grid);
    let d = score.dim();
    let mut points = vec![0.0; count * d];
    let mut initial = vec![0.0; count * d];
    points
        .par_chunks_mut(d)
        .zip(initial.par_chunks_mut(d))
        .enumerate()
        .try_for_each(|(i, (x, x0))| {
            let mut rng = rng::stream(config.seed, &[TRAJECTORY_STREAM, i as u64]);
            fill_standard_normal(&mut rng, x);
            x0.copy_from_slice(x);
            integrate_trajectory(
                score,
                config.horizon,
                &grid,
                stop,
                config.noise_enabled,
                x,
                &mut rng,
            )
        })?;
    Ok(SampleBatch {
        dim: d,
        points,
        initial: Some(initial),
        config: Some(config.clone()),
        descriptor: score.kind().to_string(),
        stop_gap: ((config.horizon - config.early_stop) - grid[stop]).max(0.0),
    })
}

/// Where forward trajectories start.
#[derive(Debug, Clone, Copy)]
pub enum InitialLaw<'a> {
    /// Uniform over the dataset points (the empirical measure).
    Empirical(&'a Dataset),
    Gaussian(&'a IsotropicGaussianTarget),
}

impl InitialLaw<'_> {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Empirical(ds) => ds.dim(),
            InitialLaw::Gaussian(g) => g.dim(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            InitialLaw::Empirical(ds) => ds.point(rng.random_range(0..ds.len())).to_vec(),
            InitialLaw::Gaussian(g) => g.sample(rng),
        }
    }
}

/// Draw `X_T = μ(T) y + σ(T) Z` with `y` from `law`.
pub fn forward_terminal_sample(
    law: InitialLaw<'_>,
    horizon: f64,
    count: usize,
    seed: u64,
) -> Result<SampleBatch> {
    let c = coefficients(horizon)?;
    if count == 0 {
        return Err(Error::domain("sample count must be positive"));
    }
    let d = law.dim();
    let mut points = vec![0.0; count * d];
    points.par_chunks_mut(d).enumerate().for_each(|(i, x)| {
        let mut rng = rng::stream(seed, &[FORWARD_STREAM, i as u64]);
        let y = law.sample(&mut rng);
        fill_standard_normal(&mut rng, x);
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = c.mu * yi + c.sigma * *xi;
        }
    });
    SampleBatch::from_flat(d, points, format!("forward-T{horizon}"))
}

/// Deterministic single-trajectory helper: integrate from a given `x0`.
pub fn backward_from<S: ScoreField + ?Sized>(
    score: &S,
    config: &SamplerConfig,
    x0: &[f64],
    stream: u64,
) -> Result<Vec<f64>> {
    config.validate()?;
    check_dim(score.dim(), x0.len())?;
    let grid = config.time_grid()?;
    let stop = config.stop_index(&grid);
    let mut x = x0.to_vec();
    let mut rng = rng::stream(config.seed, &[TRAJECTORY_STREAM, stream]);
    integrate_trajectory(
        score,
        config.horizon,
        &grid,
        stop,
        config.noise_enabled,
        &mut x,
        &mut rng,
    )?;
    Ok(x)
}
