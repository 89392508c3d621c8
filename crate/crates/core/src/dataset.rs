use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::norm_sq;
use crate::rng::standard_normal;
use crate::scores::IsotropicGaussianTarget;

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    SyntheticGaussian,
    File,
    Other(String),
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::SyntheticGaussian => f.write_str("synthetic-gaussian"),
            DatasetSource::File => f.write_str("file"),
            DatasetSource::Other(s) => f.write_str(s),
        }
    }
}

impl DatasetSource {
    pub fn parse(tag: &str) -> Self {
        match tag {
            "synthetic-gaussian" => DatasetSource::SyntheticGaussian,
            "file" => DatasetSource::File,
            other => DatasetSource::Other(other.to_string()),
        }
    }
}

/// `N ≥ 1` training points in `R^d`, stored row-major. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    data: Vec<f64>,
    pub seed: Option<u64>,
    pub source: DatasetSource,
}

impl Dataset {
    /// Build from row-major storage. Rejects empty, ragged or non-finite input.
    pub fn from_flat(dim: usize, data: Vec<f64>, source: DatasetSource) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("dataset dimension must be at least 1"));
        }
        if data.is_empty() {
            return Err(Error::domain("dataset must contain at least one point"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::domain(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite value in row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            dim,
            data,
            seed: None,
            source,
        })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if let Some(bad) = points.iter().position(|p| p.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: points[bad].len(),
            });
        }
        Self::from_flat(dim, points.concat(), DatasetSource::Other("inline".into()))
    }

    /// `n` i.i.d. draws from an isotropic Gaussian.
    pub fn sample_gaussian<R: Rng + ?Sized>(
        target: &IsotropicGaussianTarget,
        n: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let sd = target.variance().sqrt();
        let mean = target.mean();
        let mut data = Vec::with_capacity(n * mean.len());
        for _ in 0..n {
            data.extend(mean.iter().map(|m| m + sd * standard_normal(rng)));
        }
        Self::from_flat(mean.len(), data, DatasetSource::SyntheticGaussian)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Mean squared norm `(1/N) Σ ‖y_i‖²`.
    pub fn second_moment(&self) -> f64 {
        self.iter().map(norm_sq).sum::<f64>() / self.len() as f64
    }

    /// `max_i ‖y_i‖²`.
    pub fn max_norm_sq(&self) -> f64 {
        self.iter().map(norm_sq).fold(0.0, f64::max)
    }

    /// Rescale every point by a common factor so that `max_i ‖y_i‖ = radius`.
    pub fn scaled_to_radius(&self, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::domain(format!("radius must be positive, got {radius}")));
        }
        let max = self.max_norm_sq().sqrt();
        if max == 0.0 {
            return Err(Error::domain("cannot rescale a dataset of zero vectors"));
        }
        let k = radius / max;
        Ok(Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * k).collect(),
            seed: self.seed,
            source: self.source.clone(),
        })
    }

    /// Dataset with every point listed `times` times.
    pub fn repeated(&self, times: usize) -> Self {
        Self {
            dim: self.dim,
            data: self.data.repeat(times),
            seed: self.seed,
            source: self.source.clone(),
        }
    }

    /// Pooled per-coordinate sample standard deviation: the square root of
    /// the mean over coordinates of the unbiased per-coordinate variance.
    pub fn pooled_std(&self) -> Result<f64> {
        let n = self.len();
        if n < 2 {
            return Err(Error::domain("standard deviation needs at least two points"));
        }
        let d = self.dim;
        let mut mean = vec![0.0; d];
        for p in self.iter() {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut ss = 0.0;
        for p in self.iter() {
            ss += p.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>();
        }
        Ok((ss / ((n - 1) * d) as f64).sqrt())
    }
}
