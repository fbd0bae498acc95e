//! Command-line front end.
//!
//! Outputs go under `$FSG_OUTPUT_ROOT` (default `./runs`), one directory per
//! run named after the config's `name` or, failing that, its file stem.
//! Every run directory holds the canonical `config.toml` it ran with and a
//! `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::checks;
use crate::config::RunConfig;
use crate::convergence::bench_convergence;
use crate::error::{LabError, Result};
use crate::hypernet::SlowKind;
use crate::metrics::{dump_curve, write_metrics_csv, Manifest};
use crate::trainer::Trainer;

pub const OUTPUT_ROOT_ENV: &str = "FSG_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "fsg-lab", version, about = "Train and verify binary networks with generated gradients")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model (FSG or STE, per the config).
    Train { config: PathBuf },
    /// Train once per value of one setting.
    Ablate {
        config: PathBuf,
        /// `beta=0.1,0.3`, `l=3..7` or `slow=lstm,ssm`.
        #[arg(long)]
        sweep: String,
    },
    /// Averaged-iterate gap against the horizon on noisy convex quadratics.
    BenchConvergence { config: PathBuf },
    /// Run the property suites and print a pass/fail table.
    Check {
        /// Skip the two-spirals training comparison (several minutes).
        #[arg(long)]
        skip_training: bool,
    },
    /// Project a metrics CSV onto its loss-curve columns.
    DumpCurve {
        metrics: PathBuf,
        /// Write here instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT), PathBuf::from)
}

/// One ablation axis and its values.
#[derive(Clone, Debug, PartialEq)]
pub enum Sweep {
    Beta(Vec<f64>),
    L(Vec<usize>),
    Slow(Vec<SlowKind>),
}

impl Sweep {
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = |m: String| LabError::config("sweep", m);
        let (axis, values) = spec
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `axis=values`, got `{spec}`")))?;
        let list = || values.split(',').map(str::trim).filter(|v| !v.is_empty());
        let sweep = match axis.trim() {
            "beta" => Sweep::Beta(
                list()
                    .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad beta `{v}`"))))
                    .collect::<Result<_>>()?,
            ),
            "l" => {
                let mut out = Vec::new();
                for part in list() {
                    let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad(format!("bad l `{v}`")));
                    match part.split_once("..") {
                        Some((lo, hi)) => {
                            let (lo, hi) = (num(lo)?, num(hi)?);
                            if lo > hi {
                                return Err(bad(format!("empty range `{part}`")));
                            }
                            out.extend(lo..=hi);
                        }
                        None => out.push(num(part)?),
                    }
                }
                Sweep::L(out)
            }
            "slow" => Sweep::Slow(
                list()
                    .map(|v| match v {
                        "ssm" | "selective-ssm" => Ok(SlowKind::SelectiveSsm),
                        "lstm" => Ok(SlowKind::Lstm),
                        "off" => Ok(SlowKind::Off),
                        other => Err(bad(format!("unknown slow-net `{other}`"))),
                    })
                    .collect::<Result<_>>()?,
            ),
            other => return Err(bad(format!("unknown axis `{other}` (beta, l, slow)"))),
        };
        if sweep.is_empty() {
            return Err(bad("no values".into()));
        }
        Ok(sweep)
    }

    pub fn axis(&self) -> &'static str {
        match self {
            Sweep::Beta(_) => "beta",
            Sweep::L(_) => "l",
            Sweep::Slow(_) => "slow",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Sweep::Beta(v) => v.len(),
            Sweep::L(v) => v.len(),
            Sweep::Slow(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entry `i` applied to `base`, with its value rendered for paths.
    pub fn entry(&self, base: &RunConfig, i: usize) -> (RunConfig, String) {
        let mut cfg = base.clone();
        let label = match self {
            Sweep::Beta(v) => {
                cfg.train.beta = v[i];
                v[i].to_string()
            }
            Sweep::L(v) => {
                cfg.train.l = v[i];
                v[i].to_string()
            }
            Sweep::Slow(v) => {
                cfg.train.slow_kind = v[i];
                v[i].as_str().to_string()
            }
        };
        (cfg, label)
    }
}

fn run_name(cfg: &RunConfig, path: &Path) -> String {
    cfg.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned())
    })
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

/// Final numbers of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test: Option<(f64, f64)>,
}

/// Trains `cfg` and writes `metrics.csv`, `checkpoint.fsgc`, `config.toml`
/// and `manifest.json` into `dir`.
pub fn train_into(
    cfg: &RunConfig,
    data_base: &Path,
    dir: &Path,
    command: &str,
    overrides: BTreeMap<String, String>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let canonical = cfg.to_canonical()?;
    let mut manifest = Manifest::new(command, &canonical, cfg.train.seed);
    manifest.overrides = overrides;

    let data = cfg.dataset.load(cfg.train.seed, data_base)?;
    let model = cfg.model.build(data.train.sample_shape(), cfg.train.seed)?;
    let mut trainer = Trainer::new(cfg.train.clone(), model)?;
    let rows = trainer.fit(&data.train, data.test.as_ref())?;

    fs::write(dir.join("config.toml"), &canonical)?;
    write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
    trainer.checkpoint()?.save(&dir.join("checkpoint.fsgc"))?;
    let train = trainer.evaluate(&data.train)?;
    let test = match &data.test {
        Some(t) => {
            let ev = trainer.evaluate(t)?;
            Some((ev.loss, ev.accuracy))
        }
        None => None,
    };
    manifest.outputs = ["config.toml", "metrics.csv", "checkpoint.fsgc"].map(String::from).to_vec();
    manifest.write(&dir.join("manifest.json"))?;
    Ok(TrainSummary {
        train_loss: train.loss,
        train_accuracy: train.accuracy,
        test,
    })
}

fn describe(s: &TrainSummary) -> String {
    let mut line = format!("train loss {:.4} acc {:.4}", s.train_loss, s.train_accuracy);
    if let Some((l, a)) = s.test {
        line += &format!(", test loss {l:.4} acc {a:.4}");
    }
    line
}

fn cmd_train(path: &Path, root: &Path) -> Result<()> {
    let cfg = RunConfig::load(path)?;
    let dir = root.join(run_name(&cfg, path));
    let summary = train_into(&cfg, &config_dir(path), &dir, "train", BTreeMap::new())?;
    println!("{}: {}", dir.display(), describe(&summary));
    Ok(())
}

fn cmd_ablate(path: &Path, sweep: &str, root: &Path) -> Result<()> {
    let cfg = RunConfig::load(path)?;
    let sweep = Sweep::parse(sweep)?;
    let base_dir = root.join(run_name(&cfg, path)).join(format!("ablate-{}", sweep.axis()));
    let data_base = config_dir(path);
    // Entries are independent and write to disjoint directories.
    let results: Vec<(String, Result<TrainSummary>)> = (0..sweep.len())
        .into_par_iter()
        .map(|i| {
            let (entry, label) = sweep.entry(&cfg, i);
            let dir = base_dir.join(format!("{}={label}", sweep.axis()));
            let overrides = BTreeMap::from([(sweep.axis().to_string(), label.clone())]);
            (label, train_into(&entry, &data_base, &dir, "ablate", overrides))
        })
        .collect();
    fs::create_dir_all(&base_dir)?;
    let mut summary = format!("{},train_loss,train_accuracy,test_loss,test_accuracy\n", sweep.axis());
    for (label, r) in results {
        let s = r?;
        println!("{}={label}: {}", sweep.axis(), describe(&s));
        let (tl, ta) = s.test.map_or((String::new(), String::new()), |(l, a)| (l.to_string(), a.to_string()));
        summary += &format!("{label},{},{},{tl},{ta}\n", s.train_loss, s.train_accuracy);
    }
    fs::write(base_dir.join("summary.csv"), summary)?;
    Ok(())
}

fn cmd_bench(path: &Path, root: &Path) -> Result<bool> {
    let cfg = RunConfig::load(path)?;
    let dir = root.join(run_name(&cfg, path)).join("bench-convergence");
    fs::create_dir_all(&dir)?;
    let canonical = cfg.to_canonical()?;
    let mut manifest = Manifest::new("bench-convergence", &canonical, cfg.bench.seed);
    let report = bench_convergence(&cfg.bench)?;
    fs::write(dir.join("config.toml"), &canonical)?;
    report.write_csv(&dir.join("gaps.csv"))?;
    report.write_json(&dir.join("report.json"))?;
    manifest.outputs = ["config.toml", "gaps.csv", "report.json"].map(String::from).to_vec();
    manifest.write(&dir.join("manifest.json"))?;
    println!("{:>8} {:>14} {:>12} {:>14}", "t", "mean_gap", "stderr", "bound");
    for r in &report.rows {
        println!("{:>8} {:>14.6e} {:>12.3e} {:>14.6e}", r.t, r.mean_gap, r.stderr, r.rhs);
    }
    let slope = report.slope.map_or("n/a".into(), |s| format!("{s:.3}"));
    println!(
        "slope {slope}; bound holds: {}; max p_k residual {:.1e}; diverged runs {}",
        report.bound_holds(),
        report.max_pk_residual,
        report.failed_runs
    );
    Ok(report.max_pk_residual < 1e-10)
}

fn cmd_check(skip_training: bool) -> bool {
    let results = checks::run_all(!skip_training);
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!("{verdict}  {:<width$}  {:>8} ms  {}", r.name, r.elapsed_ms, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    failed == 0
}

fn cmd_dump_curve(metrics: &Path, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            let mut f = io::BufWriter::new(fs::File::create(p)?);
            dump_curve(metrics, &mut f)?;
            f.flush()?;
        }
        None => match dump_curve(metrics, io::stdout().lock()) {
            // `dump-curve m.csv | head` closes the pipe early; that is not a failure.
            Err(LabError::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => {}
            r => {
                r?;
            }
        },
    }
    Ok(())
}

/// Runs a parsed command; `Ok(false)` means a check or bench invariant failed.
pub fn execute(cli: &Cli) -> Result<bool> {
    let root = output_root();
    match &cli.command {
        Command::Train { config } => cmd_train(config, &root).map(|_| true),
        Command::Ablate { config, sweep } => cmd_ablate(config, sweep, &root).map(|_| true),
        Command::BenchConvergence { config } => cmd_bench(config, &root),
        Command::Check { skip_training } => Ok(cmd_check(*skip_training)),
        Command::DumpCurve { metrics, out } => cmd_dump_curve(metrics, out.as_deref()).map(|_| true),
    }
}

/// Entry point for the binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_forms() {
        assert_eq!(Sweep::parse("beta=0.1,0.3").unwrap(), Sweep::Beta(vec![0.1, 0.3]));
        assert_eq!(Sweep::parse("l=3..7").unwrap(), Sweep::L(vec![3, 4, 5, 6, 7]));
        assert_eq!(
            Sweep::parse("slow=lstm,ssm").unwrap(),
            Sweep::Slow(vec![SlowKind::Lstm, SlowKind::SelectiveSsm])
        );
    }

    #[test]
    fn sweep_rejects_junk() {
        for bad in ["beta", "gamma=1", "l=7..3", "beta=x", "slow=gru", "beta="] {
            assert!(Sweep::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn entry_sets_the_field() {
        let base = RunConfig::default();
        let (cfg, label) = Sweep::parse("l=4").unwrap().entry(&base, 0);
        assert_eq!((cfg.train.l, label.as_str()), (4, "4"));
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        assert!(Cli::try_parse_from(["fsg-lab", "frobnicate"]).is_err());
    }
}
