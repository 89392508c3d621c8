use ddpm_kde::estimators::{energy_distance_test, nn_distance_stats};
use ddpm_kde::kde::{kde_sample, KdeModel};
use ddpm_kde::rng;
use ddpm_kde::samplers::{backward_sample, forward_terminal_sample, InitialLaw, SampleBatch, SamplerConfig};
use ddpm_kde::scores::{empirical_optimal_score, exact_gaussian_score, IsotropicGaussianTarget};
use ddpm_kde::Dataset;

fn training_set(n: usize, seed: u64) -> Dataset {
    let target = IsotropicGaussianTarget::new(vec![-5.0, 5.0], 10.0).unwrap();
    Dataset::sample_gaussian(&target, n, &mut rng::stream(seed, &[])).unwrap()
}

#[test]
fn standard_target_is_stationary() {
    // u(t, x) = −x, so each step is x(1 − h) + √(2h) Z, whose stationary
    // variance is 2/(2 − h)
    let target = IsotropicGaussianTarget::standard(2);
    let h = 0.01;
    let cfg = SamplerConfig::uniform(2.0, h, 0.0, 9);
    let count = 8000;
    let batch = backward_sample(&exact_gaussian_score(&target), &cfg, count).unwrap();
    let want_var = 2.0 / (2.0 - h);
    for k in 0..2 {
        let xs: Vec<f64> = batch.iter().map(|p| p[k]).collect();
        let mean = xs.iter().sum::<f64>() / count as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / count as f64;
        assert!(mean.abs() < 3.0 * (want_var / count as f64).sqrt(), "mean {mean}");
        assert!((var - want_var).abs() < 3.0 * want_var * (2.0 / count as f64).sqrt(), "var {var}");
    }
}

#[test]
fn exact_score_output_matches_target() {
    let target = IsotropicGaussianTarget::new(vec![-5.0, 5.0], 10.0).unwrap();
    let cfg = SamplerConfig::uniform(5.0, 0.005, 0.01, 3);
    let generated = backward_sample(&exact_gaussian_score(&target), &cfg, 500).unwrap();
    let mut r = rng::stream(4, &[]);
    let fresh: Vec<f64> = (0..500).flat_map(|_| target.sample(&mut r)).collect();
    let fresh = SampleBatch::from_flat(2, fresh, "target").unwrap();
    let test = energy_distance_test(&generated, &fresh, 300, 5).unwrap();
    assert!(!test.rejects(0.01), "{test:?}");
}

#[test]
fn empirical_score_output_matches_diffused_mixture() {
    let ds = training_set(30, 1);
    let delta = 0.02;
    let cfg = SamplerConfig::uniform(5.0, 0.002, delta, 6);
    let generated = backward_sample(&empirical_optimal_score(&ds), &cfg, 400).unwrap();
    let mixture = kde_sample(&KdeModel::diffused(ds, delta).unwrap(), 400, 7).unwrap();
    let test = energy_distance_test(&generated, &mixture, 300, 8).unwrap();
    assert!(!test.rejects(0.01), "{test:?}");
}

#[test]
fn nearest_training_distance_shrinks_with_delta() {
    let ds = training_set(20, 2);
    let score = empirical_optimal_score(&ds);
    let medians: Vec<f64> = [0.1, 0.03, 0.01, 0.0]
        .iter()
        .map(|&delta| {
            let cfg = SamplerConfig::uniform(5.0, 0.001, delta, 10);
            let batch = backward_sample(&score, &cfg, 300).unwrap();
            nn_distance_stats(&batch, &ds).unwrap().median
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
}

#[test]
fn forward_terminal_is_nearly_standard() {
    let ds = training_set(50, 3);
    let x = forward_terminal_sample(InitialLaw::Empirical(&ds), 8.0, 600, 11).unwrap();
    let mut r = rng::stream(12, &[]);
    let z: Vec<f64> = (0..1200).map(|_| rng::standard_normal(&mut r)).collect();
    let z = SampleBatch::from_flat(2, z, "normal").unwrap();
    assert!(!energy_distance_test(&x, &z, 300, 13).unwrap().rejects(0.01));
}
