use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ddpm_kde::io::{load_batch, load_dataset, save_dataset};
use ddpm_kde::rng;
use ddpm_kde::scores::IsotropicGaussianTarget;
use ddpm_kde::Dataset;

const BIN: &str = env!("CARGO_BIN_EXE_ddpm-kde");

const SMALL: &str = r#"
seed = 42

[target]
mean = [-5.0, 5.0]
variance = 10.0

[score_error]
train_sizes = [20, 40, 80]
samples_per_time = 20
repetitions = 2

[sampler]
horizon = 3.0
step = 0.01
early_stop = 0.02
count = 60

[generate]
train_size = 15

[kde_compare]
train_size = 15
permutations = 200

[bounds]
train_size = 30
tv_samples = 4000
bound_instances = 50
"#;

fn ddpm(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn outputs_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    for cmd in ["score-error", "generate", "kde-compare", "bounds-check"] {
        let mut runs = Vec::new();
        for threads in ["1", "3"] {
            let out = dir.path().join(format!("{cmd}-{threads}"));
            let o = ddpm(&[cmd, "--config", &cfg, "--threads", threads, "--out", out.to_str().unwrap()]);
            assert!(o.status.code() == Some(0) || o.status.code() == Some(1), "{cmd}: {o:?}");
            runs.push(files(&out));
        }
        assert!(!runs[0].is_empty());
        assert_eq!(runs[0], runs[1], "{cmd} differs between thread counts");
    }
}

#[test]
fn outputs_embed_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("o");
    let o = ddpm(&["score-error", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let csv = fs::read_to_string(out.join("score_error.csv")).unwrap();
    assert!(csv.contains("# seed: 7"));
    assert!(csv.contains("\"train_sizes\":[20,40,80]"));
    let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "N,error,std_error");
    assert_eq!(body.len(), 4);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("score_error.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["seed"], 7);
    assert!(json["slope"].is_f64());
}

#[test]
fn single_size_skips_slope() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("train_sizes = [20, 40, 80]", "train_sizes = [20]");
    let cfg = write_config(dir.path(), "one.toml", &text);
    let out = dir.path().join("o");
    let o = ddpm(&["score-error", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("score_error.json")).unwrap()).unwrap();
    assert!(json["slope"].is_null());
    assert_eq!(json["entries"].as_array().unwrap().len(), 1);
}

#[test]
fn generate_writes_three_files_per_score() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("o");
    let o = ddpm(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    for score in ["empirical", "exact"] {
        let train = load_batch(out.join(format!("{score}_training.csv"))).unwrap();
        let init = load_batch(out.join(format!("{score}_initial.csv"))).unwrap();
        let gen = load_batch(out.join(format!("{score}_generated.csv"))).unwrap();
        assert_eq!((train.len(), init.len(), gen.len()), (15, 60, 60));
    }
    // both scores start from the same noise
    assert_eq!(
        fs::read(out.join("empirical_initial.csv")).unwrap(),
        fs::read(out.join("exact_initial.csv")).unwrap()
    );
}

#[test]
fn mismatched_bandwidth_fails_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("permutations = 200", "permutations = 200\nbandwidth_factor = 10.0")
        .replace("count = 60", "count = 300");
    let cfg = write_config(dir.path(), "wide.toml", &text);
    let out = dir.path().join("o");
    let o = ddpm(&["kde-compare", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("kde_compare.json")).unwrap()).unwrap();
    assert_eq!(json["rejected"], true);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();

    let typo = write_config(dir.path(), "typo.toml", "seed = 1\n\n[sampler]\nhorizn = 5.0\n");
    let o = ddpm(&["generate", "--config", &typo, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("typo.toml") && err.contains("line 4"), "{err}");

    let no_seed = write_config(dir.path(), "noseed.toml", "[bounds]\ntrain_size = 10\n");
    let o = ddpm(&["bounds-check", "--config", &no_seed, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));

    let empty = write_config(dir.path(), "empty.toml", "seed = 1\n[bounds]\ntrain_size = 0\n");
    let o = ddpm(&["bounds-check", "--config", &empty, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!Path::new(out).exists(), "no partial output");

    let missing = write_config(dir.path(), "missing.toml", "seed = 1\n[target]\ndataset = \"nope.csv\"\n[generate]\nscores = [\"empirical\"]\n");
    let o = ddpm(&["generate", "--config", &missing, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));

    let o = ddpm(&["generate", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = ddpm(&["generate", "--preset", "figure2", "--out", out]);
    assert_eq!(o.status.code(), Some(2), "experiment mismatch");
}

#[test]
fn dataset_file_target() {
    let dir = tempfile::tempdir().unwrap();
    let target = IsotropicGaussianTarget::new(vec![1.0, -1.0, 0.5], 2.0).unwrap();
    let ds = Dataset::sample_gaussian(&target, 12, &mut rng::stream(3, &[])).unwrap().with_seed(3);
    save_dataset(&ds, dir.path().join("train.csv"), &["hand-made".into()]).unwrap();
    assert_eq!(load_dataset(dir.path().join("train.csv")).unwrap().as_flat(), ds.as_flat());

    let text = "seed = 5\n[target]\ndataset = \"train.csv\"\n[sampler]\nhorizon = 2.0\nstep = 0.01\ncount = 30\n[generate]\nscores = [\"empirical\"]\n";
    let cfg = write_config(dir.path(), "file.toml", text);
    let out = dir.path().join("o");
    let o = ddpm(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let gen = load_batch(out.join("empirical_generated.csv")).unwrap();
    assert_eq!((gen.dim(), gen.len()), (3, 30));
    let train = load_batch(out.join("empirical_training.csv")).unwrap();
    assert_eq!(train.as_flat(), ds.as_flat());

    // the exact score needs a Gaussian target
    let cfg = write_config(dir.path(), "exact.toml", &text.replace("[\"empirical\"]", "[\"exact\"]"));
    let o = ddpm(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
