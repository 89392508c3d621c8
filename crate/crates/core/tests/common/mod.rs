#![allow(dead_code)]

use ddpm_kde::rng::{self, StreamRng};
use ddpm_kde::Dataset;
use rand::Rng;

/// Five-point central-difference gradient of `f` at `x` with step `h`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let mut at = |s: f64| {
                xp[i] = x[i] + s * h;
                let v = f(&xp);
                xp[i] = x[i];
                v
            };
            (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
        })
        .collect()
}

pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let diff: f64 = got.iter().zip(want).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / scale.max(1e-3)
}

/// A random instance: dataset with `N ≤ 20`, `d ≤ 5`, a time in `[0.01, 5]`
/// and a query point near the diffused data.
pub struct Instance {
    pub dataset: Dataset,
    pub t: f64,
    pub x: Vec<f64>,
}

pub fn random_instance(seed: u64, index: u64) -> Instance {
    let mut r: StreamRng = rng::stream(seed, &[index]);
    let n = r.random_range(1..=20);
    let d = r.random_range(1..=5);
    let scale = r.random_range(0.5..3.0);
    let data: Vec<f64> = (0..n * d).map(|_| scale * rng::standard_normal(&mut r)).collect();
    let dataset = Dataset::from_flat(d, data, ddpm_kde::DatasetSource::Other("random".into())).unwrap();
    let t = r.random_range(0.01..5.0);
    let c = ddpm_kde::ou::coefficients(t).unwrap();
    let anchor = dataset.point(r.random_range(0..n)).to_vec();
    let x = anchor
        .iter()
        .map(|y| c.mu * y + 2.0 * c.sigma * rng::standard_normal(&mut r))
        .collect();
    Instance { dataset, t, x }
}

pub fn standard_normal_batch(d: usize, count: usize, shift: f64, seed: u64) -> ddpm_kde::samplers::SampleBatch {
    let mut r = rng::stream(seed, &[]);
    let pts: Vec<f64> = (0..count * d).map(|_| shift + rng::standard_normal(&mut r)).collect();
    ddpm_kde::samplers::SampleBatch::from_flat(d, pts, "normal").unwrap()
}
