use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use foba_core::datagen::{
    gen_logistic, write_sparse_classification, LogisticSyntheticSpec, SparseClassification,
};
use foba_select::config::{Command as Cmd, ExperimentConfig};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_foba-select"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn logistic_file(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let planted = gen_logistic(&LogisticSyntheticSpec {
        n: 60,
        d: 20,
        k_bar: 4,
        seed,
        ..LogisticSyntheticSpec::default()
    })
    .unwrap();
    let x = planted.problem.x();
    let rows = (0..x.nrows())
        .flat_map(|i| (0..x.ncols()).map(move |j| x[(i, j)]))
        .collect();
    let data = SparseClassification {
        dim: x.ncols(),
        rows,
        labels: planted.problem.labels().to_vec(),
    };
    let path = dir.join(name);
    write_sparse_classification(&path, &data).unwrap();
    path
}

/// CSV rows with the named column dropped.
fn without_column(csv: &str, column: &str) -> Vec<Vec<String>> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let skip = header.iter().position(|h| *h == column).unwrap();
    csv.lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, v)| v.to_string())
                .collect()
        })
        .collect()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().to_string())
        .collect()
}

#[test]
fn reruns_produce_identical_results() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("cfg.txt");
    fs::write(&config, "n=60\nd=40\nsweep=3,5\n").unwrap();
    let mut outputs = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "1"), ("c", "2")] {
        let out = tmp.path().join(name);
        ok(&[
            "logistic-synthetic",
            "--config",
            path_str(&config),
            "--trials",
            "2",
            "--jobs",
            jobs,
            "--out",
            path_str(&out),
        ]);
        outputs.push(fs::read_to_string(out.join("results.csv")).unwrap());
    }
    let a = without_column(&outputs[0], "wall_micros");
    assert_eq!(a.len(), 1 + 2 * 2 * 4);
    assert_eq!(a, without_column(&outputs[1], "wall_micros"));
    assert_eq!(a, without_column(&outputs[2], "wall_micros"));
}

#[test]
fn huge_epsilon_selects_nothing() {
    let tmp = TempDir::new().unwrap();
    let input = logistic_file(tmp.path(), "train.txt", 3);
    let out = tmp.path().join("out");
    let stdout = ok(&[
        "select",
        path_str(&input),
        "--eps",
        "1e9",
        "--out",
        path_str(&out),
    ])
    .stdout;
    assert!(String::from_utf8_lossy(&stdout).contains("0 features selected"));
    assert_eq!(
        fs::read_to_string(out.join("selected.csv")).unwrap(),
        "feature,coefficient\n"
    );
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(column(&trace, "kind"), vec!["stop"]);
}

#[test]
fn trace_rows_match_steps() {
    let tmp = TempDir::new().unwrap();
    let input = logistic_file(tmp.path(), "train.txt", 4);
    let out = tmp.path().join("out");
    ok(&[
        "select",
        path_str(&input),
        "--sparsity",
        "6",
        "--one-based",
        "--out",
        path_str(&out),
    ]);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let kinds = column(&trace, "kind");
    let forward = kinds.iter().filter(|k| *k == "forward").count();
    let backward = kinds.iter().filter(|k| *k == "backward").count();
    assert_eq!(kinds.len(), forward + backward + 1);
    assert_eq!(kinds.last().unwrap(), "stop");
    let selected = fs::read_to_string(out.join("selected.csv")).unwrap();
    let features: Vec<usize> = column(&selected, "feature")
        .iter()
        .map(|f| f.parse().unwrap())
        .collect();
    assert_eq!(features.len(), 6);
    assert_eq!(forward - backward, 6);
    assert!(features.iter().all(|&f| (1..=20).contains(&f)));
}

#[test]
fn single_label_chains_are_error_free() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("cfg.txt");
    fs::write(&config, "length=40\nlabels=1\n").unwrap();
    let out = tmp.path().join("out");
    ok(&[
        "crf-synthetic",
        "--config",
        path_str(&config),
        "--trials",
        "1",
        "--sweep",
        "2",
        "--out",
        path_str(&out),
    ]);
    let csv = fs::read_to_string(out.join("classification.csv")).unwrap();
    let train = column(&csv, "train_error");
    assert_eq!(train.len(), 4);
    for v in train.iter().chain(&column(&csv, "test_error")) {
        assert_eq!(v.parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn train_as_test_gives_equal_errors() {
    let tmp = TempDir::new().unwrap();
    let input = logistic_file(tmp.path(), "train.txt", 5);
    let out = tmp.path().join("out");
    ok(&[
        "dataset",
        path_str(&input),
        "--sweep",
        "2,5",
        "--out",
        path_str(&out),
    ]);
    let csv = fs::read_to_string(out.join("classification.csv")).unwrap();
    let train = column(&csv, "train_error");
    assert_eq!(train.len(), 2 * 4);
    assert_eq!(train, column(&csv, "test_error"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("cfg.txt");
    fs::write(&config, "n=60\nbogus_key=1\n").unwrap();
    let out = run(&["logistic-synthetic", "--config", path_str(&config)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));

    let mut cfg = ExperimentConfig::defaults(Cmd::LogisticSynthetic);
    assert!(cfg.apply_text("nonsense=3").is_err());
    assert!(cfg.apply_text("d=50 # comment\n\ntrials=2").is_ok());
    assert_eq!((cfg.d, cfg.trials), (50, 2));
}

#[test]
fn conflicting_rule_and_measure_is_rejected() {
    let out = run(&["logistic-synthetic", "--algo", "foba-obj", "--eps", "0.1"]);
    assert!(!out.status.success());
    let out = run(&["logistic-synthetic", "--eps", "0.1", "--delta", "0.1"]);
    assert!(!out.status.success());
}
