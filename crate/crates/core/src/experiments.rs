//! Config-driven experiment runners.
//!
//! A run is described by an [`ExperimentConfig`] (TOML). Every runner
//! validates the whole config before touching the output directory, derives
//! all randomness from the master seed, and writes CSV/JSON files that embed
//! the resolved config as `#` comment lines (CSV) or a `config` field (JSON).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    energy_distance_test, nn_distance_stats, score_error_protocol, tv_diffused_vs_kde,
    tv_forward_vs_standard, ErrorCurve, NnDistanceStats, ScoreErrorParams,
};
use crate::io::{self, batch_to_string, table_to_string, write_text};
use crate::kde::{kde_sample, scott_bandwidth, KdeModel, DEFAULT_SCOTT_MULTIPLIER};
use crate::ou::coefficients;
use crate::rng::{self, derive_seed};
use crate::samplers::{backward_sample, GridSpec, SampleBatch, SamplerConfig};
use crate::scores::{
    canonical_weighted_average, empirical_mixture_log_density, empirical_optimal_score,
    exact_gaussian_score, mixture_log_density_lower_bound, weighted_average_bounds_check,
    IsotropicGaussianTarget,
};

const DATA_STREAM: u64 = 1;
const SAMPLER_STREAM: u64 = 2;
const KDE_STREAM: u64 = 3;
const TEST_STREAM: u64 = 4;
const TV_STREAM: u64 = 5;
const INSTANCE_STREAM: u64 = 6;
const SCORE_ERROR_STREAM: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ScoreError,
    Generate,
    KdeCompare,
    BoundsCheck,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::ScoreError => "score-error",
            ExperimentKind::Generate => "generate",
            ExperimentKind::KdeCompare => "kde-compare",
            ExperimentKind::BoundsCheck => "bounds-check",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub mean: Option<Vec<f64>>,
    pub variance: Option<f64>,
    /// CSV dataset used as the training set instead of a Gaussian draw.
    pub dataset: Option<PathBuf>,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            mean: Some(vec![-5.0, 5.0]),
            variance: Some(10.0),
            dataset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreErrorSection {
    pub train_sizes: Vec<usize>,
    pub delta: f64,
    pub horizon: f64,
    pub grid_step: f64,
    pub samples_per_time: usize,
    pub repetitions: usize,
}

impl Default for ScoreErrorSection {
    fn default() -> Self {
        Self {
            train_sizes: vec![100, 200, 500, 1000, 2000],
            delta: 0.02,
            horizon: 5.0,
            grid_step: 0.02,
            samples_per_time: 1000,
            repetitions: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub horizon: f64,
    pub step: Option<f64>,
    /// Explicit grid `0 = t_0 < ... < t_K = horizon`; overrides `step`.
    pub grid: Option<Vec<f64>>,
    pub early_stop: f64,
    pub count: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            step: Some(0.0005),
            grid: None,
            early_stop: 0.01,
            count: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreChoice {
    Empirical,
    Exact,
}

impl fmt::Display for ScoreChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreChoice::Empirical => "empirical",
            ScoreChoice::Exact => "exact",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub train_size: usize,
    pub scores: Vec<ScoreChoice>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            train_size: 100,
            scores: vec![ScoreChoice::Empirical, ScoreChoice::Exact],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeCompareSection {
    pub train_size: usize,
    pub permutations: usize,
    pub alpha: f64,
    /// Multiplies the matched bandwidth `σ(δ)`; 1 is the exact match.
    pub bandwidth_factor: f64,
    /// Multiplier on Scott's rule for the reference KDE.
    pub scott_multiplier: f64,
}

impl Default for KdeCompareSection {
    fn default() -> Self {
        Self {
            train_size: 100,
            permutations: 500,
            alpha: 0.01,
            bandwidth_factor: 1.0,
            scott_multiplier: DEFAULT_SCOTT_MULTIPLIER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    pub train_size: usize,
    /// Rescale the training set so that `max ‖y_i‖ = radius`; defaults to `d`.
    pub radius: Option<f64>,
    pub deltas: Vec<f64>,
    pub horizons: Vec<f64>,
    pub tv_samples: usize,
    pub bound_instances: usize,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            train_size: 100,
            radius: None,
            deltas: vec![0.01, 0.1],
            horizons: vec![3.0, 5.0],
            tv_samples: 100_000,
            bound_instances: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default)]
    pub score_error: ScoreErrorSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub kde_compare: KdeCompareSection,
    #[serde(default)]
    pub bounds: BoundsSection,
}

pub const PRESET_NAMES: [&str; 4] = ["figure2", "figure3", "kde-compare", "bounds"];

const PRESET_FIGURE2: &str = r#"# Score approximation error of the empirical optimal score versus N.
experiment = "score-error"
seed = 20240607

[target]
mean = [-5.0, 5.0]
variance = 10.0

[score_error]
train_sizes = [100, 200, 500, 1000, 2000]
delta = 0.02
horizon = 5.0
grid_step = 0.02
samples_per_time = 1000
repetitions = 10
"#;

const PRESET_FIGURE3: &str = r#"# Backward sampling with the exact and the empirical optimal score.
experiment = "generate"
seed = 20240607

[target]
mean = [-5.0, 5.0]
variance = 10.0

[sampler]
horizon = 5.0
step = 0.0005
early_stop = 0.01
count = 1000

[generate]
train_size = 100
scores = ["empirical", "exact"]
"#;

const PRESET_KDE_COMPARE: &str = r#"# Empirical-score sampler output against the matched Gaussian mixture.
experiment = "kde-compare"
seed = 20240607

[target]
mean = [-5.0, 5.0]
variance = 10.0

[sampler]
horizon = 5.0
step = 0.0005
early_stop = 0.01
count = 1000

[kde_compare]
train_size = 100
permutations = 500
alpha = 0.01
bandwidth_factor = 1.0
scott_multiplier = 0.1
"#;

const PRESET_BOUNDS: &str = r#"# Total-variation bounds and weighted-average inequalities.
experiment = "bounds-check"
seed = 20240607

[target]
mean = [-5.0, 5.0]
variance = 10.0

[bounds]
train_size = 100
radius = 2.0
deltas = [0.01, 0.1]
horizons = [3.0, 5.0]
tv_samples = 100000
bound_instances = 1000
"#;

impl ExperimentConfig {
    pub fn preset_text(name: &str) -> Result<&'static str> {
        match name {
            "figure2" => Ok(PRESET_FIGURE2),
            "figure3" => Ok(PRESET_FIGURE3),
            "kde-compare" => Ok(PRESET_KDE_COMPARE),
            "bounds" => Ok(PRESET_BOUNDS),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (available: {})",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::parse(Self::preset_text(name)?, &format!("preset:{name}"))
    }

    /// Parse TOML; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        // dataset paths are relative to the config file
        if let (Some(ds), Some(dir)) = (cfg.target.dataset.as_mut(), path.parent()) {
            if ds.is_relative() {
                *ds = dir.join(&*ds);
            }
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("`seed` is required (set it in the config or pass --seed)".into()))
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    fn comment_lines(&self, kind: ExperimentKind) -> Result<Vec<String>> {
        Ok(vec![
            format!("experiment: {kind}"),
            format!("seed: {}", self.seed()?),
            format!("config: {}", self.to_json()),
        ])
    }

    fn gaussian_target(&self) -> Result<Option<IsotropicGaussianTarget>> {
        match (&self.target.mean, self.target.variance, &self.target.dataset) {
            (_, _, Some(_)) => Ok(None),
            (Some(mean), Some(var), None) => IsotropicGaussianTarget::new(mean.clone(), var)
                .map(Some)
                .map_err(|e| Error::Config(format!("[target]: {e}"))),
            _ => Err(Error::Config(
                "[target] needs either `mean` and `variance` or `dataset`".into(),
            )),
        }
    }

    fn require_gaussian(&self, what: &str) -> Result<IsotropicGaussianTarget> {
        self.gaussian_target()?.ok_or_else(|| {
            Error::Config(format!("{what} needs a Gaussian [target] (mean, variance)"))
        })
    }

    /// Training set: the dataset file, or `train_size` draws from the target.
    fn training_set(&self, train_size: usize, section: &str) -> Result<Dataset> {
        let seed = self.seed()?;
        if let Some(path) = &self.target.dataset {
            return io::load_dataset(path);
        }
        if train_size == 0 {
            return Err(Error::Config(format!("[{section}] train_size must be positive")));
        }
        let target = self.require_gaussian(section)?;
        let mut r = rng::stream(seed, &[DATA_STREAM]);
        Ok(Dataset::sample_gaussian(&target, train_size, &mut r)?.with_seed(seed))
    }

    fn sampler_config(&self) -> Result<SamplerConfig> {
        let s = &self.sampler;
        let grid = match (&s.grid, s.step) {
            (Some(points), _) => GridSpec::Points(points.clone()),
            (None, Some(h)) => GridSpec::Step(h),
            (None, None) => return Err(Error::Config("[sampler] needs `step` or `grid`".into())),
        };
        if s.count == 0 {
            return Err(Error::Config("[sampler] count must be positive".into()));
        }
        let cfg = SamplerConfig {
            horizon: s.horizon,
            grid,
            early_stop: s.early_stop,
            seed: derive_seed(self.seed()?, &[SAMPLER_STREAM]),
            noise_enabled: true,
        };
        cfg.validate()
            .map_err(|e| Error::Config(format!("[sampler]: {e}")))?;
        Ok(cfg)
    }
}

/// What a runner produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    /// `false` when a requested check failed.
    pub passed: bool,
    pub summary: Value,
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    write_text(path, &text)
}

fn nn_summary(stats: &NnDistanceStats) -> Value {
    json!({
        "median": stats.median,
        "q01": stats.quantile(0.01),
        "q99": stats.quantile(0.99),
        "mean": stats.distances.iter().sum::<f64>() / stats.distances.len() as f64,
    })
}

/// Score-approximation error versus training-set size.
pub fn run_score_error(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    let kind = ExperimentKind::ScoreError;
    let seed = cfg.seed()?;
    let target = cfg.require_gaussian("score-error")?;
    let s = &cfg.score_error;
    if s.train_sizes.is_empty() {
        return Err(Error::Config("[score_error] train_sizes is empty".into()));
    }
    if s.train_sizes.windows(2).any(|w| w[1] <= w[0]) || s.train_sizes[0] == 0 {
        return Err(Error::Config(
            "[score_error] train_sizes must be positive and strictly increasing".into(),
        ));
    }
    let make = |n: usize| ScoreErrorParams {
        train_size: n,
        delta: s.delta,
        horizon: s.horizon,
        grid_step: s.grid_step,
        samples_per_time: s.samples_per_time,
        repetitions: s.repetitions,
        seed: derive_seed(seed, &[SCORE_ERROR_STREAM, n as u64]),
    };
    make(s.train_sizes[0])
        .time_grid()
        .map_err(|e| Error::Config(format!("[score_error]: {e}")))?;
    if s.samples_per_time == 0 || s.repetitions == 0 {
        return Err(Error::Config(
            "[score_error] samples_per_time and repetitions must be positive".into(),
        ));
    }

    let mut entries = Vec::new();
    for &n in &s.train_sizes {
        entries.push((n, score_error_protocol(&target, &make(n))?));
    }
    let curve = ErrorCurve::new(entries)?;

    prepare_out_dir(out_dir)?;
    let comments = cfg.comment_lines(kind)?;
    let rows: Vec<Vec<String>> = curve
        .entries
        .iter()
        .map(|(n, e)| vec![n.to_string(), e.value.to_string(), e.std_error.to_string()])
        .collect();
    let csv = out_dir.join("score_error.csv");
    write_text(&csv, &table_to_string(&comments, &["N", "error", "std_error"], &rows))?;
    let summary = json!({
        "experiment": kind.to_string(),
        "seed": seed,
        "slope": curve.fitted_slope,
        "intercept": curve.fitted_intercept,
        "entries": curve.entries.iter().map(|(n, e)| json!({
            "N": n, "error": e.value, "std_error": e.std_error, "parameters": e.parameters,
        })).collect::<Vec<_>>(),
        "config": cfg.to_json(),
    });
    let js = out_dir.join("score_error.json");
    write_json(&js, &summary)?;
    Ok(RunOutcome {
        files: vec![csv, js],
        passed: true,
        summary,
    })
}

/// Backward sampling with each requested score; writes training, initial
/// and generated points per score.
pub fn run_generate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    let kind = ExperimentKind::Generate;
    let seed = cfg.seed()?;
    let sampler = cfg.sampler_config()?;
    if cfg.generate.scores.is_empty() {
        return Err(Error::Config("[generate] scores is empty".into()));
    }
    let target = cfg.gaussian_target()?;
    if cfg.generate.scores.contains(&ScoreChoice::Exact) && target.is_none() {
        return Err(Error::Config(
            "[generate] the exact score needs a Gaussian [target]".into(),
        ));
    }
    let train = cfg.training_set(cfg.generate.train_size, "generate")?;

    let mut batches = Vec::new();
    for &choice in &cfg.generate.scores {
        let batch = match choice {
            ScoreChoice::Empirical => {
                backward_sample(&empirical_optimal_score(&train), &sampler, cfg.sampler.count)?
            }
            ScoreChoice::Exact => backward_sample(
                &exact_gaussian_score(target.as_ref().expect("checked above")),
                &sampler,
                cfg.sampler.count,
            )?,
        };
        batches.push((choice, batch));
    }

    prepare_out_dir(out_dir)?;
    let comments = cfg.comment_lines(kind)?;
    let train_text = batch_to_string(
        &SampleBatch::from_flat(train.dim(), train.as_flat().to_vec(), "training")?,
        &comments,
    );
    let mut files = Vec::new();
    let mut per_score = serde_json::Map::new();
    for (choice, batch) in &batches {
        let initial = batch.initial_batch().expect("backward sampler records initial points");
        for (suffix, text) in [
            ("training", train_text.clone()),
            ("initial", batch_to_string(&initial, &comments)),
            ("generated", batch_to_string(batch, &comments)),
        ] {
            let path = out_dir.join(format!("{choice}_{suffix}.csv"));
            write_text(&path, &text)?;
            files.push(path);
        }
        let stats = nn_distance_stats(batch, &train)?;
        per_score.insert(
            choice.to_string(),
            json!({
                "descriptor": batch.descriptor,
                "stop_gap": batch.stop_gap,
                "nearest_training_distance": nn_summary(&stats),
            }),
        );
    }
    let summary = json!({
        "experiment": kind.to_string(),
        "seed": seed,
        "train_size": train.len(),
        "scores": per_score,
        "config": cfg.to_json(),
    });
    let js = out_dir.join("generate.json");
    write_json(&js, &summary)?;
    files.push(js);
    Ok(RunOutcome {
        files,
        passed: true,
        summary,
    })
}

/// Empirical-score sampler output against direct draws from the mixture
/// with centers `μ(δ) y_i` and bandwidth `σ(δ)·bandwidth_factor`.
pub fn run_kde_compare(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    let kind = ExperimentKind::KdeCompare;
    let seed = cfg.seed()?;
    let sampler = cfg.sampler_config()?;
    let k = &cfg.kde_compare;
    if !(k.alpha > 0.0 && k.alpha < 1.0) {
        return Err(Error::Config("[kde_compare] alpha must lie in (0, 1)".into()));
    }
    if k.permutations < 200 {
        return Err(Error::Config("[kde_compare] permutations must be at least 200".into()));
    }
    if !(k.bandwidth_factor > 0.0) {
        return Err(Error::Config("[kde_compare] bandwidth_factor must be positive".into()));
    }
    if !(cfg.sampler.early_stop > 0.0) {
        return Err(Error::Config(
            "[kde_compare] needs early_stop > 0 (the matched bandwidth σ(δ) vanishes at 0)".into(),
        ));
    }
    let train = cfg.training_set(k.train_size, "kde_compare")?;
    let c = coefficients(cfg.sampler.early_stop)?;
    let mixture = KdeModel::new(train.clone(), c.sigma * k.bandwidth_factor, c.mu)?;
    let count = cfg.sampler.count;

    let ddpm = backward_sample(&empirical_optimal_score(&train), &sampler, count)?;
    let direct = kde_sample(&mixture, count, derive_seed(seed, &[KDE_STREAM, 0]))?;
    let test = energy_distance_test(&ddpm, &direct, k.permutations, derive_seed(seed, &[TEST_STREAM]))?;
    let ddpm_nn = nn_distance_stats(&ddpm, &train)?;
    let direct_nn = nn_distance_stats(&direct, &train)?;
    let scott = if train.len() >= 2 {
        let gamma = scott_bandwidth(&train, k.scott_multiplier)?;
        let batch = kde_sample(
            &KdeModel::plain(train.clone(), gamma)?,
            count,
            derive_seed(seed, &[KDE_STREAM, 1]),
        )?;
        json!({"bandwidth": gamma, "nearest_training_distance": nn_summary(&nn_distance_stats(&batch, &train)?)})
    } else {
        Value::Null
    };
    let passed = !test.rejects(k.alpha);

    prepare_out_dir(out_dir)?;
    let summary = json!({
        "experiment": kind.to_string(),
        "seed": seed,
        "train_size": train.len(),
        "mixture": {"center_scale": mixture.center_scale(), "bandwidth": mixture.bandwidth()},
        "energy_test": test,
        "alpha": k.alpha,
        "rejected": !passed,
        "ddpm_nearest_training_distance": nn_summary(&ddpm_nn),
        "mixture_nearest_training_distance": nn_summary(&direct_nn),
        "scott_kde": scott,
        "stop_gap": ddpm.stop_gap,
        "config": cfg.to_json(),
    });
    let js = out_dir.join("kde_compare.json");
    write_json(&js, &summary)?;
    Ok(RunOutcome {
        files: vec![js],
        passed,
        summary,
    })
}

/// One row of the bounds table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub bound_id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub std_error: f64,
    pub pass: bool,
}

impl BoundRow {
    fn new(bound_id: String, lhs: f64, rhs: f64, std_error: f64) -> Self {
        Self {
            pass: lhs <= rhs + 3.0 * std_error,
            bound_id,
            lhs,
            rhs,
            std_error,
        }
    }
}

/// Evaluate the TV bounds and weighted-average inequalities on a rescaled
/// training set.
pub fn bounds_table(cfg: &ExperimentConfig) -> Result<(Dataset, Vec<BoundRow>)> {
    let seed = cfg.seed()?;
    let b = &cfg.bounds;
    if b.tv_samples == 0 {
        return Err(Error::Config("[bounds] tv_samples must be positive".into()));
    }
    if b.deltas.iter().any(|d| !(*d > 0.0)) || b.horizons.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Config("[bounds] deltas and horizons must be positive".into()));
    }
    let raw = cfg.training_set(b.train_size, "bounds")?;
    let d = raw.dim() as f64;
    let radius = b.radius.unwrap_or(d);
    let train = raw
        .scaled_to_radius(radius)
        .map_err(|e| Error::Config(format!("[bounds]: {e}")))?;
    let mut rows = Vec::new();

    for (i, &delta) in b.deltas.iter().enumerate() {
        let r = tv_diffused_vs_kde(&train, delta, b.tv_samples, derive_seed(seed, &[TV_STREAM, 0, i as u64]))?;
        rows.push(BoundRow::new(
            format!("mixture-vs-kde-tv[delta={delta}]"),
            r.value,
            d * delta.sqrt() / 2.0,
            r.std_error,
        ));
    }
    for (i, &horizon) in b.horizons.iter().enumerate() {
        let r = tv_forward_vs_standard(&train, horizon, b.tv_samples, derive_seed(seed, &[TV_STREAM, 1, i as u64]))?;
        let rhs = d / 2.0 * (-horizon).exp();
        rows.push(BoundRow::new(format!("forward-vs-normal-tv[T={horizon}]"), r.value, rhs, r.std_error));
        // backward output vs exact mixture is bounded, by data processing,
        // by the initialization mismatch TV(p_T, π^d)
        rows.push(BoundRow::new(format!("sampler-vs-mixture-tv[T={horizon}]"), r.value, rhs, r.std_error));
    }

    // weighted-average inequalities and the mixture lower bound on random (t, x)
    let r2 = train.max_norm_sq();
    let mut worst_c5 = f64::NEG_INFINITY;
    let mut worst_c9 = f64::NEG_INFINITY;
    let mut worst_c10 = f64::NEG_INFINITY;
    for i in 0..b.bound_instances {
        let mut r = rng::stream(seed, &[INSTANCE_STREAM, i as u64]);
        let t = 0.01 + (5.0 - 0.01) * rand::Rng::random::<f64>(&mut r);
        let x: Vec<f64> = (0..train.dim())
            .map(|_| (radius + 1.0) * rng::standard_normal(&mut r))
            .collect();
        let w = weighted_average_bounds_check(&train, t, &x)?;
        worst_c5 = worst_c5.max(w.lhs);
        worst_c9 = worst_c9.max(w.lhs - w.bound_uniform);
        let lambda = 0.5 / coefficients(t)?.mu;
        let lb = mixture_log_density_lower_bound(&train, t, &x, lambda)?;
        worst_c10 = worst_c10.max(lb - empirical_mixture_log_density(&train, t, &x)?);
    }
    if b.bound_instances > 0 {
        rows.push(BoundRow::new("weighted-mean-radius".into(), worst_c5, r2 * (1.0 + 1e-12), 0.0));
        rows.push(BoundRow::new("weighted-mean-second-moment".into(), worst_c9, 1e-12 * r2.max(1.0), 0.0));
        rows.push(BoundRow::new("mixture-log-density-lower-bound".into(), worst_c10, 1e-9, 0.0));
    }
    let (lhs, rhs) = canonical_weighted_average(&train);
    rows.push(BoundRow::new("canonical-weighted-mean".into(), lhs, rhs * (1.0 + 1e-12), 0.0));
    Ok((train, rows))
}

pub fn run_bounds_check(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    let kind = ExperimentKind::BoundsCheck;
    let seed = cfg.seed()?;
    let (train, rows) = bounds_table(cfg)?;
    let passed = rows.iter().all(|r| r.pass);

    prepare_out_dir(out_dir)?;
    let comments = cfg.comment_lines(kind)?;
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.bound_id.clone(),
                r.lhs.to_string(),
                r.rhs.to_string(),
                r.std_error.to_string(),
                r.pass.to_string(),
            ]
        })
        .collect();
    let csv = out_dir.join("bounds.csv");
    write_text(
        &csv,
        &table_to_string(&comments, &["bound_id", "lhs", "rhs", "std_error", "pass"], &cells),
    )?;
    let summary = json!({
        "experiment": kind.to_string(),
        "seed": seed,
        "train_size": train.len(),
        "radius": train.max_norm_sq().sqrt(),
        "rows": rows,
        "passed": passed,
        "config": cfg.to_json(),
    });
    let js = out_dir.join("bounds.json");
    write_json(&js, &summary)?;
    Ok(RunOutcome {
        files: vec![csv, js],
        passed,
        summary,
    })
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score-error" => Ok(Self::ScoreError),
            "generate" => Ok(Self::Generate),
            "kde-compare" => Ok(Self::KdeCompare),
            "bounds-check" => Ok(Self::BoundsCheck),
            other => Err(Error::Config(format!("unknown experiment `{other}`"))),
        }
    }
}

/// Dispatch on `kind`, checking it against the config's `experiment` field.
pub fn run(kind: ExperimentKind, cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    if let Some(declared) = cfg.experiment {
        if declared != kind {
            return Err(Error::Config(format!(
                "config declares experiment `{declared}` but `{kind}` was requested"
            )));
        }
    }
    match kind {
        ExperimentKind::ScoreError => run_score_error(cfg, out_dir),
        ExperimentKind::Generate => run_generate(cfg, out_dir),
        ExperimentKind::KdeCompare => run_kde_compare(cfg, out_dir),
        ExperimentKind::BoundsCheck => run_bounds_check(cfg, out_dir),
    }
}

/// `(d/2)·e^{−T}` and `d√δ/2`, the right-hand sides used in the bounds table.
pub fn tv_bounds(d: usize, delta: f64, horizon: f64) -> (f64, f64) {
    let d = d as f64;
    (d * delta.sqrt() / 2.0, d / 2.0 * (-horizon).exp())
}
