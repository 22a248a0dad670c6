use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn adglab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adglab"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .env_remove("ADGLAB_SEED")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

const TINY: &str = r#"
[generator]
total_instances = 900

[train]
steps = 30
validation_interval = 10
batch_size = 16

[[variants]]
variant = "none"

[[variants]]
variant = "cadg-jsd"
lambda = 0.5
"#;

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), config).unwrap();
    dir
}

#[test]
fn full_pipeline_succeeds_and_is_reproducible() {
    let dir = setup(TINY);
    let d = dir.path();
    let ok = |args: &[&str]| {
        let out = adglab(d, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    ok(&["gen", "--config", "exp.toml", "--seed", "3", "--out", "a.jsonl"]);
    ok(&["gen", "--config", "exp.toml", "--seed", "3", "--out", "b.jsonl"]);
    assert_eq!(std::fs::read(d.join("a.jsonl")).unwrap(), std::fs::read(d.join("b.jsonl")).unwrap());
    assert!(d.join("a.manifest.json").exists());

    ok(&["split", "a.jsonl", "--config", "exp.toml", "--seed", "3", "--out", "splits"]);
    ok(&["split", "a.jsonl", "--config", "exp.toml", "--seed", "3", "--out", "splits2"]);
    for name in ["train", "trainval", "testval", "test"] {
        let f = format!("{name}.jsonl");
        assert_eq!(std::fs::read(d.join("splits").join(&f)).unwrap(), std::fs::read(d.join("splits2").join(&f)).unwrap());
    }

    ok(&["train", "splits", "--config", "exp.toml", "--seed", "3", "--out", "runs"]);
    for file in ["config.toml", "runlog.csv", "checkpoint_best.json", "checkpoint_last.json", "summary.json"] {
        assert!(d.join("runs/baseline").join(file).exists(), "{file}");
        assert!(d.join("runs/cadg-jsd").join(file).exists(), "{file}");
    }
    let log = std::fs::read_to_string(d.join("runs/cadg-jsd/runlog.csv")).unwrap();
    assert!(log.starts_with("step,L_H,L_sp,L_U,L_DG,D_obj,L_total,lambda,val_r1"));
    assert_eq!(log.lines().count(), 31);

    ok(&["train", "splits", "--config", "exp.toml", "--seed", "3", "--variant", "none", "--out", "again"]);
    assert_eq!(
        std::fs::read(d.join("runs/baseline/checkpoint_best.json")).unwrap(),
        std::fs::read(d.join("again/baseline/checkpoint_best.json")).unwrap()
    );

    let out = ok(&["eval", "runs/baseline/checkpoint_best.json", "splits/test.jsonl", "--out", "eval.json"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PredCls R@1"));
    assert!(d.join("eval.per_class.csv").exists());

    let out = ok(&["compare", "runs", "--out", "table.md"]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("Frequency") && table.contains("cadg-jsd"));
    assert!(d.join("table.md").exists());
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = setup(TINY);
    let d = dir.path();
    assert_eq!(code(&adglab(d, &["gen", "--config", "exp.toml", "--seed", "11", "--out", "flag.jsonl"])), 0);
    let out = Command::new(env!("CARGO_BIN_EXE_adglab"))
        .args(["gen", "--config", "exp.toml", "--out", "env.jsonl"])
        .current_dir(d)
        .env("ADGLAB_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(d.join("flag.jsonl")).unwrap(), std::fs::read(d.join("env.jsonl")).unwrap());
}

#[test]
fn validation_errors_exit_one() {
    let dir = setup("[generator]\ncolour = 1\n");
    let d = dir.path();
    assert_eq!(code(&adglab(d, &["gen", "--config", "exp.toml", "--out", "x.jsonl"])), 1);
    assert_eq!(code(&adglab(d, &["gen"])), 1);
    assert_eq!(code(&adglab(d, &["frobnicate"])), 1);
    assert_eq!(code(&adglab(d, &["gen", "--threads", "0", "--out", "x.jsonl"])), 1);
    assert_eq!(code(&adglab(d, &["split", "missing.jsonl", "--out", "s"])), 1);
    assert_eq!(code(&adglab(d, &["--help"])), 0);
}

#[test]
fn tampered_dataset_exits_two() {
    let dir = setup(TINY);
    let d = dir.path();
    assert_eq!(code(&adglab(d, &["gen", "--config", "exp.toml", "--out", "a.jsonl"])), 0);
    let text = std::fs::read_to_string(d.join("a.jsonl")).unwrap();
    std::fs::write(d.join("a.jsonl"), text.replacen("\"object_label\":", "\"object_label\": ", 1)).unwrap();
    assert_eq!(code(&adglab(d, &["split", "a.jsonl", "--config", "exp.toml", "--out", "s"])), 2);
}

#[test]
fn numerical_divergence_exits_three() {
    let config = format!("{TINY}\n[train.optimizer]\nlearning_rate = 1e200\ngradient_clip = 1e300\n");
    let dir = setup(&config);
    let d = dir.path();
    assert_eq!(code(&adglab(d, &["gen", "--config", "exp.toml", "--out", "a.jsonl"])), 0);
    assert_eq!(code(&adglab(d, &["split", "a.jsonl", "--config", "exp.toml", "--out", "s"])), 0);
    let out = adglab(d, &["train", "s", "--config", "exp.toml", "--variant", "none", "--out", "r"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn shipped_theorem_fixtures_verify() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures().join("theorems");
    let out = adglab(dir.path(), &["verify-theorems", fx.to_str().unwrap(), "--out", "report.txt"]);
    assert_eq!(code(&out), 0);
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.lines().all(|l| l.starts_with("PASS")));
    assert!(report.contains("kl identity trained") && report.contains("jsd identity trained"));
}

#[test]
fn malformed_theorem_fixture_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"kind":"domain","family":{"domains":1,"bins":2,"rows":[[0.5,0.6]],"weights":[1.0]}}"#).unwrap();
    assert_eq!(code(&adglab(dir.path(), &["verify-theorems", "."])), 1);
}
