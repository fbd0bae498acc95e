//! One PASS/FAIL line per acceptance criterion, then a single assertion that
//! all of them passed.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the table.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fsg_lab::checks::{self, CheckResult};

const TRAIN_CONFIG: &str = r#"
name = "determinism"

[train]
epochs = 15
batch_size = 64
lr = 0.01
seed = 4

[dataset]
kind = "spirals"
n_per_class = 100
test_per_class = 25
"#;

fn train_once(config: &Path, root: &Path) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_fsg-lab"))
        .arg("train")
        .arg(config)
        .env("FSG_OUTPUT_ROOT", root)
        .status()
        .expect("spawn fsg-lab");
    assert!(status.success(), "train exited with {status}");
    std::fs::read(root.join("determinism").join("metrics.csv")).expect("metrics.csv")
}

/// Two `train` runs of one config into separate output roots.
fn determinism() -> CheckResult {
    let start = Instant::now();
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("run.toml");
    std::fs::write(&config, TRAIN_CONFIG).expect("write config");
    let a = train_once(&config, &dir.path().join("a"));
    let b = train_once(&config, &dir.path().join("b"));
    let rows = a.iter().filter(|&&c| c == b'\n').count().saturating_sub(1);
    CheckResult {
        name: "determinism".into(),
        passed: a == b && rows > 0,
        detail: format!("{rows} metrics rows, {} bytes; identical: {}", a.len(), a == b),
        elapsed_ms: start.elapsed().as_millis(),
    }
}

#[test]
fn acceptance_criteria() {
    let (rate, pk) = checks::convergence(10);
    let results = [
        checks::gradients(checks::GRAD_INSTANCES),
        checks::ssm_duality(200),
        checks::momentum_identity(100, 20),
        checks::degeneracy(50),
        checks::binarization(10_000),
        checks::hgs_contract(20),
        checks::spirals_comparison(5),
        rate,
        pk,
        determinism(),
    ];
    for (i, r) in results.iter().enumerate() {
        println!("criterion {:>2}: {}", i + 1, r.line());
    }
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.passed)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
