use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fsg_lab::metrics::{read_metrics_csv, Manifest, CURVE_HEADER, METRICS_HEADER};

const SMALL: &str = r#"
[train]
epochs = 2
batch_size = 50
lr = 0.01
seed = 9
l = 3

[dataset]
kind = "blobs"
n_per_class = 40
"#;

fn fsg(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsg-lab"))
        .args(args)
        .env("FSG_OUTPUT_ROOT", root)
        .output()
        .expect("spawn fsg-lab")
}

fn setup(body: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, body).unwrap();
    (dir, cfg)
}

#[test]
fn train_writes_the_run_directory() {
    let (dir, cfg) = setup(SMALL);
    let root = dir.path().join("out");
    let out = fsg(&["train", cfg.to_str().unwrap()], &root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = root.join("small");
    for f in ["config.toml", "metrics.csv", "checkpoint.fsgc", "manifest.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let text = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(text.lines().next(), Some(METRICS_HEADER));
    let rows = read_metrics_csv(&run.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.loss >= 0.0 && (0.0..=1.0).contains(&r.accuracy)));

    let m = Manifest::read(&run.join("manifest.json")).unwrap();
    assert_eq!(m.command, "train");
    assert_eq!(m.seed, 9);
    let canonical = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert_eq!(m.config_hash, fsg_lab::metrics::sha256_hex(canonical.as_bytes()));
}

#[test]
fn ablate_emits_one_metrics_file_per_value() {
    let (dir, cfg) = setup(SMALL);
    let root = dir.path().join("out");
    let out = fsg(&["ablate", cfg.to_str().unwrap(), "--sweep", "beta=0.1,0.3"], &root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let base = root.join("small").join("ablate-beta");
    for beta in ["0.1", "0.3"] {
        let entry = base.join(format!("beta={beta}"));
        assert!(entry.join("metrics.csv").is_file());
        let m = Manifest::read(&entry.join("manifest.json")).unwrap();
        assert_eq!(m.overrides.get("beta").map(String::as_str), Some(beta));
        let saved = fsg_lab::config::RunConfig::load(&entry.join("config.toml")).unwrap();
        assert_eq!(saved.train.beta.to_string(), beta);
    }
    let summary = std::fs::read_to_string(base.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn ablate_over_history_length_and_slow_net() {
    let (dir, cfg) = setup(SMALL);
    let root = dir.path().join("out");
    assert!(fsg(&["ablate", cfg.to_str().unwrap(), "--sweep", "l=3..4"], &root).status.success());
    assert!(fsg(&["ablate", cfg.to_str().unwrap(), "--sweep", "slow=lstm,ssm"], &root).status.success());
    let small = root.join("small");
    assert!(small.join("ablate-l/l=4/metrics.csv").is_file());
    assert!(small.join("ablate-slow/slow=lstm/metrics.csv").is_file());
    assert!(small.join("ablate-slow/slow=selective-ssm/metrics.csv").is_file());
}

#[test]
fn dump_curve_is_a_projection() {
    let (dir, cfg) = setup(SMALL);
    let root = dir.path().join("out");
    assert!(fsg(&["train", cfg.to_str().unwrap()], &root).status.success());
    let metrics = root.join("small/metrics.csv");
    let out = fsg(&["dump-curve", metrics.to_str().unwrap()], &root);
    assert!(out.status.success());
    let curve = String::from_utf8(out.stdout).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some(CURVE_HEADER));
    let full = std::fs::read_to_string(&metrics).unwrap();
    for (c, m) in lines.zip(full.lines().skip(1)) {
        let kept: Vec<&str> = m.split(',').take(4).collect();
        assert_eq!(c, kept.join(","));
    }
}

#[test]
fn bench_convergence_writes_gaps() {
    let body = "[bench]\nrepeats = 3\nhorizons = [100, 300, 1000]\n";
    let (dir, cfg) = setup(body);
    let root = dir.path().join("out");
    let out = fsg(&["bench-convergence", cfg.to_str().unwrap()], &root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let gaps = std::fs::read_to_string(root.join("small/bench-convergence/gaps.csv")).unwrap();
    assert_eq!(gaps.lines().next(), Some("t,mean_gap,stderr,rhs"));
    assert_eq!(gaps.lines().count(), 4);
    assert!(root.join("small/bench-convergence/manifest.json").is_file());
}

#[test]
fn unknown_subcommand_prints_usage_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = fsg(&["frobnicate"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn invalid_config_names_the_field() {
    let (dir, cfg) = setup("[train]\nl = 0\n");
    let out = fsg(&["train", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("`l`"));
}
