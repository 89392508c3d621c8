//! Gaussian kernel density estimation.
//!
//! A [`KdeModel`] is the mixture `(1/N) Σ N(x; c·y_i, γ² I)`. With `c = 1` it
//! is the ordinary KDE of the data; with `c = μ(δ)` and `γ = σ(δ)` it is the
//! exact law of the forward process started from the empirical measure and
//! run for time `δ`, which is what the backward sampler with the empirical
//! optimal score reproduces.

use rand::Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::math::{log_sum_exp, scaled_dist_sq, LN_2PI};
use crate::ou::positive_coefficients;
use crate::rng::{self, fill_standard_normal};
use crate::samplers::SampleBatch;

const KDE_STREAM: u64 = 0xB4C4_0003;

pub const DEFAULT_SCOTT_MULTIPLIER: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct KdeModel {
    dataset: Dataset,
    bandwidth: f64,
    center_scale: f64,
}

impl KdeModel {
    pub fn new(dataset: Dataset, bandwidth: f64, center_scale: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::domain(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if !(center_scale > 0.0 && center_scale <= 1.0) {
            return Err(Error::domain(format!(
                "center scale must lie in (0, 1], got {center_scale}"
            )));
        }
        Ok(Self {
            dataset,
            bandwidth,
            center_scale,
        })
    }

    /// Plain KDE `(1/N) Σ N(x; y_i, γ² I)`.
    pub fn plain(dataset: Dataset, bandwidth: f64) -> Result<Self> {
        Self::new(dataset, bandwidth, 1.0)
    }

    /// Forward-process law at time `δ` from the empirical measure:
    /// centers `μ(δ) y_i`, bandwidth `σ(δ)`.
    pub fn diffused(dataset: Dataset, delta: f64) -> Result<Self> {
        let c = positive_coefficients(delta)?;
        Self::new(dataset, c.sigma, c.mu)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn center_scale(&self) -> f64 {
        self.center_scale
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    /// One draw: a uniformly chosen center, blurred by `γ Z`.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> usize {
        let j = rng.random_range(0..self.dataset.len());
        fill_standard_normal(rng, out);
        for (o, &y) in out.iter_mut().zip(self.dataset.point(j)) {
            *o = self.center_scale * y + self.bandwidth * *o;
        }
        j
    }
}

/// `multiplier · N^{−1/(d+4)} · σ̂` with `σ̂` the pooled per-coordinate
/// standard deviation.
pub fn scott_bandwidth(dataset: &Dataset, multiplier: f64) -> Result<f64> {
    if !(multiplier > 0.0) {
        return Err(Error::domain(format!(
            "bandwidth multiplier must be positive, got {multiplier}"
        )));
    }
    let sd = dataset.pooled_std()?;
    if !(sd > 0.0) {
        return Err(Error::domain("dataset has zero variance"));
    }
    let n = dataset.len() as f64;
    let d = dataset.dim() as f64;
    Ok(multiplier * n.powf(-1.0 / (d + 4.0)) * sd)
}

/// Draw `count` samples; draw `i` uses the stream `(seed, [KDE_STREAM, i])`.
pub fn kde_sample(model: &KdeModel, count: usize, seed: u64) -> Result<SampleBatch> {
    Ok(kde_sample_with_centers(model, count, seed)?.0)
}

/// Like [`kde_sample`], also returning the chosen center index of each draw.
pub fn kde_sample_with_centers(
    model: &KdeModel,
    count: usize,
    seed: u64,
) -> Result<(SampleBatch, Vec<usize>)> {
    if count == 0 {
        return Err(Error::domain("sample count must be positive"));
    }
    let d = model.dim();
    let mut points = vec![0.0; count * d];
    let mut centers = vec![0usize; count];
    points
        .par_chunks_mut(d)
        .zip(centers.par_iter_mut())
        .enumerate()
        .for_each(|(i, (x, j))| {
            let mut rng = rng::stream(seed, &[KDE_STREAM, i as u64]);
            *j = model.sample_one(&mut rng, x);
        });
    let batch = SampleBatch::from_flat(
        d,
        points,
        format!("kde(gamma={},scale={})", model.bandwidth, model.center_scale),
    )?;
    Ok((batch, centers))
}

pub fn kde_log_density(model: &KdeModel, x: &[f64]) -> Result<f64> {
    check_dim(model.dim(), x.len())?;
    let var = model.bandwidth * model.bandwidth;
    let logits: Vec<f64> = model
        .dataset
        .iter()
        .map(|y| -0.5 * scaled_dist_sq(x, model.center_scale, y) / var)
        .collect();
    let d = x.len() as f64;
    Ok(log_sum_exp(&logits)
        - (model.dataset.len() as f64).ln()
        - 0.5 * d * (LN_2PI + var.ln()))
}
