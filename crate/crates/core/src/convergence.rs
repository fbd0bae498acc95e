//! Convex-problem bench for the fast/slow update rule.
//!
//! The iteration under test is
//!
//! ```text
//! x_{k+1} = x_k − α·Φ_f(𝒢_k) + β·(x_k − x_{k−1} + n_k),   x_{−1} = x_0
//! ```
//!
//! with `𝒢_k` a sampled component gradient, `Φ_f` a fixed positive diagonal
//! map standing in for the fast-net and `n_k` zero-mean noise on the slow
//! branch (so the slow output equals the true momentum in expectation).
//! `α = C/√(T+1)` is held for the whole run of horizon `T`.
//!
//! The gap of the averaged iterate `x̂_T` is measured once per horizon, so
//! each logged `t` comes from its own run, exactly as the bound is stated.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::rng::Rng;

/// Iterates with a norm above this count as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// `f_i(x) = ½(x − c_i)ᵀH(x − c_i)` with diagonal `H`.
///
/// Offsets are `c_i = x* + H⁻¹z_i` with `Σz_i = 0` and `mean‖z_i‖² = δ²`,
/// so the sampled gradient is unbiased and its variance is exactly `δ²`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexProblem {
    pub hess: Vec<f64>,
    pub x_star: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
    pub f_star: f64,
    pub delta: f64,
}

impl ConvexProblem {
    /// Curvatures spread uniformly over `[0.5, 2]`.
    pub fn quadratic(dim: usize, components: usize, delta: f64, rng: &mut Rng) -> Result<Self> {
        if dim == 0 || components < 2 {
            return Err(LabError::Contract(format!(
                "need dim >= 1 and at least 2 components (got {dim}, {components})"
            )));
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(LabError::Domain(format!("noise level must be >= 0, got {delta}")));
        }
        let hess: Vec<f64> = (0..dim).map(|_| rng.uniform_range(0.5, 2.0)).collect();
        let x_star: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let mut z: Vec<Vec<f64>> = (0..components)
            .map(|_| (0..dim).map(|_| rng.normal()).collect())
            .collect();
        for j in 0..dim {
            let mean = z.iter().map(|v| v[j]).sum::<f64>() / components as f64;
            z.iter_mut().for_each(|v| v[j] -= mean);
        }
        let ms = z.iter().map(|v| norm_sq(v)).sum::<f64>() / components as f64;
        let k = if ms > 0.0 { delta / ms.sqrt() } else { 0.0 };
        let centers: Vec<Vec<f64>> = z
            .iter()
            .map(|v| (0..dim).map(|j| x_star[j] + k * v[j] / hess[j]).collect())
            .collect();
        let mut p = Self {
            hess,
            x_star,
            centers,
            f_star: 0.0,
            delta,
        };
        p.f_star = p.f(&p.x_star.clone());
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.hess.len()
    }

    pub fn f(&self, x: &[f64]) -> f64 {
        let n = self.centers.len() as f64;
        self.centers
            .iter()
            .map(|c| 0.5 * (0..self.dim()).map(|j| self.hess[j] * (x[j] - c[j]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n
    }

    /// `f(x) − f*`, evaluated in the closed form `½(x − x*)ᵀH(x − x*)`.
    pub fn gap(&self, x: &[f64]) -> f64 {
        0.5 * (0..self.dim()).map(|j| self.hess[j] * (x[j] - self.x_star[j]).powi(2)).sum::<f64>()
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|j| self.hess[j] * (x[j] - self.x_star[j])).collect()
    }

    pub fn component_grad(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let c = &self.centers[i];
        (0..self.dim()).map(|j| self.hess[j] * (x[j] - c[j])).collect()
    }

    pub fn sample_grad(&self, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        self.component_grad(rng.below(self.centers.len()), x)
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FsgConvexConfig {
    pub c: f64,
    pub beta: f64,
    /// Diagonal of `Φ_f`.
    pub phi: Vec<f64>,
    /// Slow-branch noise std per unit step: `n_k ~ N(0, (α·slow_noise)²)`.
    pub slow_noise: f64,
    /// `α_k = C/√(k+1)` instead of the constant `C/√(T+1)`.
    pub per_step_alpha: bool,
}

impl Default for FsgConvexConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            beta: 0.5,
            phi: Vec::new(),
            slow_noise: 0.1,
            per_step_alpha: false,
        }
    }
}

/// Every term of one run, enough to replay the update exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateTrace {
    /// `x_0 … x_T`.
    pub iterates: Vec<Vec<f64>>,
    /// `Φ_f(𝒢_k)` for `k < T`.
    pub fast_terms: Vec<Vec<f64>>,
    /// `Δ_s^k`, the slow output minus the realized momentum.
    pub slow_errors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub beta: f64,
    /// Running averages `x̂_0 … x̂_T`.
    pub averages: Vec<Vec<f64>>,
    pub diverged: bool,
}

impl IterateTrace {
    pub fn horizon(&self) -> usize {
        self.fast_terms.len()
    }

    pub fn final_average(&self) -> &[f64] {
        self.averages.last().expect("a trace holds x_0")
    }

    /// Largest difference between the stored running averages and averages
    /// recomputed from the iterates.
    pub fn average_drift(&self) -> f64 {
        let dim = self.iterates[0].len();
        let mut sum = vec![0.0; dim];
        let mut worst: f64 = 0.0;
        for (t, x) in self.iterates.iter().enumerate() {
            for j in 0..dim {
                sum[j] += x[j];
            }
            for j in 0..dim {
                worst = worst.max((sum[j] / (t + 1) as f64 - self.averages[t][j]).abs());
            }
        }
        worst
    }
}

/// Runs the fast/slow iteration for `horizon` steps from `x0`.
pub fn run_fsg_convex(
    problem: &ConvexProblem,
    cfg: &FsgConvexConfig,
    x0: &[f64],
    horizon: usize,
    rng: &mut Rng,
) -> Result<IterateTrace> {
    let dim = problem.dim();
    if !(cfg.c > 0.0) {
        return Err(LabError::config("c", format!("must be > 0, got {}", cfg.c)));
    }
    if !(0.0..1.0).contains(&cfg.beta) {
        return Err(LabError::config("beta", format!("must lie in [0, 1), got {}", cfg.beta)));
    }
    if x0.len() != dim {
        return Err(LabError::dim("run_fsg_convex", &[x0.len()], &[dim]));
    }
    let phi = if cfg.phi.is_empty() { vec![1.0; dim] } else { cfg.phi.clone() };
    if phi.len() != dim || phi.iter().any(|&p| !(p > 0.0)) {
        return Err(LabError::config("phi", format!("needs {dim} positive entries")));
    }
    let mut trace = IterateTrace {
        iterates: vec![x0.to_vec()],
        fast_terms: Vec::with_capacity(horizon),
        slow_errors: Vec::with_capacity(horizon),
        alphas: Vec::with_capacity(horizon),
        beta: cfg.beta,
        averages: vec![x0.to_vec()],
        diverged: false,
    };
    let mut sum = x0.to_vec();
    let mut prev = x0.to_vec();
    let mut x = x0.to_vec();
    for k in 0..horizon {
        let alpha = if cfg.per_step_alpha {
            cfg.c / ((k + 1) as f64).sqrt()
        } else {
            cfg.c / ((horizon + 1) as f64).sqrt()
        };
        let g = problem.sample_grad(&x, rng);
        let fast: Vec<f64> = (0..dim).map(|j| phi[j] * g[j]).collect();
        let noise: Vec<f64> = (0..dim).map(|_| alpha * cfg.slow_noise * rng.normal()).collect();
        let next: Vec<f64> = (0..dim)
            .map(|j| x[j] - alpha * fast[j] + cfg.beta * (x[j] - prev[j] + noise[j]))
            .collect();
        prev = std::mem::replace(&mut x, next);
        for j in 0..dim {
            sum[j] += x[j];
        }
        trace.averages.push(sum.iter().map(|s| s / (k + 2) as f64).collect());
        trace.iterates.push(x.clone());
        trace.fast_terms.push(fast);
        trace.slow_errors.push(noise);
        trace.alphas.push(alpha);
        if !x.iter().all(|v| v.is_finite()) || norm_sq(&x).sqrt() > DIVERGENCE_NORM {
            trace.diverged = true;
            break;
        }
    }
    Ok(trace)
}

/// Largest residual of
/// `x_{k+1} + p_{k+1} = x_k + p_k − α/(1−β)·Φ_f(𝒢_k) + β/(1−β)·Δ_s^k`
/// with `p_k = β/(1−β)·(x_k − x_{k−1})`, `p_0 = 0`.
pub fn pk_recursion_check(trace: &IterateTrace, beta: f64) -> Result<f64> {
    let steps = trace.fast_terms.len();
    if trace.slow_errors.len() != steps || trace.alphas.len() != steps || trace.iterates.len() != steps + 1 {
        return Err(LabError::Contract(
            "trace is missing stored update terms for some steps".into(),
        ));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(LabError::Domain(format!("beta must lie in [0, 1), got {beta}")));
    }
    let r = beta / (1.0 - beta);
    let xs = &trace.iterates;
    let p = |k: usize, j: usize| if k == 0 { 0.0 } else { r * (xs[k][j] - xs[k - 1][j]) };
    let mut worst: f64 = 0.0;
    for k in 0..steps {
        let a = trace.alphas[k] / (1.0 - beta);
        for j in 0..xs[k].len() {
            let lhs = xs[k + 1][j] + p(k + 1, j);
            let rhs = xs[k][j] + p(k, j) - a * trace.fast_terms[k][j] + r * trace.slow_errors[k][j];
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(worst)
}

/// Window of `t` over which [`rate_fit`] fits.
pub const RATE_WINDOW: (usize, usize) = (100, 10_000);

/// Least-squares slope of `log gap` against `log(t+1)` over the points with
/// `t` in [`RATE_WINDOW`].
pub fn rate_fit(points: &[(usize, f64)]) -> Result<f64> {
    let window: Vec<(usize, usize, f64)> = points
        .iter()
        .enumerate()
        .filter(|(_, (t, _))| (RATE_WINDOW.0..=RATE_WINDOW.1).contains(t))
        .map(|(i, &(t, g))| (i, t, g))
        .collect();
    if let Some(&(index, _, gap)) = window.iter().find(|(_, _, g)| !(*g > 0.0)) {
        return Err(LabError::Fit { index, gap });
    }
    if window.len() < 2 {
        return Err(LabError::Contract(format!(
            "rate fit needs at least 2 points in t ∈ [{}, {}], got {}",
            RATE_WINDOW.0,
            RATE_WINDOW.1,
            window.len()
        )));
    }
    let xs: Vec<f64> = window.iter().map(|(_, t, _)| ((t + 1) as f64).ln()).collect();
    let ys: Vec<f64> = window.iter().map(|(_, _, g)| g.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Constants of the bound as realized by one bench configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c: f64,
    pub beta: f64,
    /// Smallest and largest gain of `Φ_f`.
    pub omega: f64,
    pub theta: f64,
    /// Bracket on `‖x_k − x*‖` measured over every iterate of every run.
    pub kappa: f64,
    pub rho: f64,
    /// Largest `‖∇f(x_k)‖` measured.
    pub g: f64,
    pub delta: f64,
}

/// Right-hand side of the averaged-iterate bound at horizon `t`, given the
/// initial gap `f(x_0) − f*` and squared distance `‖x_0 − x*‖²`.
pub fn bound_rhs(k: &BoundConstants, initial_gap: f64, initial_dist_sq: f64, t: usize) -> f64 {
    let s = ((t + 1) as f64).sqrt();
    let ok = k.omega * k.kappa;
    k.beta / ((1.0 - k.beta) * (t + 1) as f64) * initial_gap
        + (1.0 - k.beta) * initial_dist_sq / (2.0 * k.c * ok * s)
        + k.c * k.theta * k.rho * (k.g * k.g + k.delta * k.delta) / (2.0 * ok * (1.0 - k.beta) * s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub dim: usize,
    pub components: usize,
    pub delta: f64,
    pub repeats: usize,
    /// Horizons `T`; one independent run per horizon and repeat.
    pub horizons: Vec<usize>,
    /// Distance of `x_0` from `x*`.
    pub init_distance: f64,
    /// `Φ_f` gains are drawn from `[phi_min, phi_max]`.
    pub phi_min: f64,
    pub phi_max: f64,
    pub seed: u64,
    pub c: f64,
    pub beta: f64,
    pub slow_noise: f64,
    pub per_step_alpha: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            components: 64,
            delta: 0.1,
            repeats: 20,
            horizons: log_grid(100, 10_000, 9),
            init_distance: 1.0,
            phi_min: 0.8,
            phi_max: 1.25,
            seed: 0,
            c: 1.0,
            beta: 0.5,
            slow_noise: 0.1,
            per_step_alpha: false,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(LabError::config(f, m.to_string()));
        if self.dim == 0 {
            return bad("dim", "must be >= 1");
        }
        if self.components < 2 {
            return bad("components", "must be >= 2");
        }
        if self.repeats == 0 {
            return bad("repeats", "must be >= 1");
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return bad("horizons", "needs at least one horizon, all >= 1");
        }
        if !(self.phi_min > 0.0 && self.phi_min <= self.phi_max) {
            return bad("phi_min", "needs 0 < phi_min <= phi_max");
        }
        if !(self.c > 0.0) {
            return bad("c", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad("beta", "must lie in [0, 1)");
        }
        if !(self.slow_noise >= 0.0) || !(self.delta >= 0.0) {
            return bad("slow_noise", "noise levels must be >= 0");
        }
        if !(self.init_distance >= 0.0) {
            return bad("init_distance", "must be >= 0");
        }
        Ok(())
    }
}

/// `n` integers spaced evenly in log between `lo` and `hi` (inclusive).
pub fn log_grid(lo: usize, hi: usize, n: usize) -> Vec<usize> {
    if n <= 1 {
        return vec![lo];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut v: Vec<usize> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp().round() as usize)
        .collect();
    v.dedup();
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub t: usize,
    pub mean_gap: f64,
    pub stderr: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<GapRow>,
    /// `None` when the fit is impossible (e.g. a zero gap in the window).
    pub slope: Option<f64>,
    pub max_pk_residual: f64,
    pub max_average_drift: f64,
    pub constants: BoundConstants,
    pub failed_runs: usize,
    pub config: BenchConfig,
}

impl BenchReport {
    pub fn bound_holds(&self) -> bool {
        self.rows.iter().all(|r| r.rhs >= r.mean_gap)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(out, "t,mean_gap,stderr,rhs")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.t, r.mean_gap, r.stderr, r.rhs)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

struct RunSummary {
    t: usize,
    gap: f64,
    pk: f64,
    drift: f64,
    min_dist: f64,
    max_dist: f64,
    max_grad: f64,
    diverged: bool,
}

/// Runs every `(horizon, repeat)` pair and collects gaps, residuals and
/// the realized constants. Repeats are independent and run in parallel;
/// each is seeded from its own sub-stream so the result does not depend
/// on scheduling.
pub fn bench_convergence(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let problem = ConvexProblem::quadratic(cfg.dim, cfg.components, cfg.delta, &mut root.split(0))?;
    let mut setup = root.split(1);
    let phi: Vec<f64> = (0..cfg.dim).map(|_| setup.uniform_range(cfg.phi_min, cfg.phi_max)).collect();
    let dir: Vec<f64> = (0..cfg.dim).map(|_| setup.normal()).collect();
    let scale = cfg.init_distance / norm_sq(&dir).sqrt().max(f64::MIN_POSITIVE);
    let x0: Vec<f64> = (0..cfg.dim).map(|j| problem.x_star[j] + scale * dir[j]).collect();
    let fsg = FsgConvexConfig {
        c: cfg.c,
        beta: cfg.beta,
        phi: phi.clone(),
        slow_noise: cfg.slow_noise,
        per_step_alpha: cfg.per_step_alpha,
    };

    let jobs: Vec<(usize, usize)> = cfg
        .horizons
        .iter()
        .enumerate()
        .flat_map(|(h, _)| (0..cfg.repeats).map(move |r| (h, r)))
        .collect();
    let runs: Vec<RunSummary> = jobs
        .par_iter()
        .map(|&(h, r)| {
            let t = cfg.horizons[h];
            let mut rng = root.split(1000 + (h * cfg.repeats + r) as u64);
            let trace = run_fsg_convex(&problem, &fsg, &x0, t, &mut rng)?;
            let dists: Vec<f64> = trace.iterates.iter().map(|x| dist(x, &problem.x_star)).collect();
            Ok(RunSummary {
                t,
                gap: problem.gap(trace.final_average()),
                pk: pk_recursion_check(&trace, fsg.beta)?,
                drift: trace.average_drift(),
                min_dist: dists.iter().cloned().fold(f64::INFINITY, f64::min),
                max_dist: dists.iter().cloned().fold(0.0, f64::max),
                max_grad: trace
                    .iterates
                    .iter()
                    .map(|x| norm_sq(&problem.grad(x)).sqrt())
                    .fold(0.0, f64::max),
                diverged: trace.diverged,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ok: Vec<&RunSummary> = runs.iter().filter(|r| !r.diverged).collect();
    let constants = BoundConstants {
        c: fsg.c,
        beta: fsg.beta,
        omega: phi.iter().cloned().fold(f64::INFINITY, f64::min),
        theta: phi.iter().cloned().fold(0.0, f64::max),
        kappa: ok.iter().map(|r| r.min_dist).fold(f64::INFINITY, f64::min),
        rho: ok.iter().map(|r| r.max_dist).fold(0.0, f64::max),
        g: ok.iter().map(|r| r.max_grad).fold(0.0, f64::max),
        delta: cfg.delta,
    };
    let initial_gap = problem.gap(&x0);
    let initial_dist_sq = dist(&x0, &problem.x_star).powi(2);
    let rows: Vec<GapRow> = cfg
        .horizons
        .iter()
        .map(|&t| {
            let gaps: Vec<f64> = ok.iter().filter(|r| r.t == t).map(|r| r.gap).collect();
            let n = gaps.len() as f64;
            let mean = gaps.iter().sum::<f64>() / n;
            let var = if gaps.len() > 1 {
                gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            GapRow {
                t,
                mean_gap: mean,
                stderr: (var / n).sqrt(),
                rhs: bound_rhs(&constants, initial_gap, initial_dist_sq, t),
            }
        })
        .collect();
    let points: Vec<(usize, f64)> = rows.iter().map(|r| (r.t, r.mean_gap)).collect();
    Ok(BenchReport {
        slope: rate_fit(&points).ok(),
        max_pk_residual: runs.iter().map(|r| r.pk).fold(0.0, f64::max),
        max_average_drift: runs.iter().map(|r| r.drift).fold(0.0, f64::max),
        constants,
        failed_runs: runs.len() - ok.len(),
        rows,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(delta: f64) -> ConvexProblem {
        ConvexProblem::quadratic(1, 4, delta, &mut Rng::new(3)).unwrap()
    }

    #[test]
    fn noise_is_calibrated_and_unbiased() {
        let p = ConvexProblem::quadratic(5, 16, 0.1, &mut Rng::new(0)).unwrap();
        let x = vec![0.3; 5];
        let g = p.grad(&x);
        let mut mean = [0.0; 5];
        let mut var = 0.0;
        for i in 0..16 {
            let gi = p.component_grad(i, &x);
            var += (0..5).map(|j| (gi[j] - g[j]).powi(2)).sum::<f64>() / 16.0;
            for j in 0..5 {
                mean[j] += gi[j] / 16.0;
            }
        }
        for j in 0..5 {
            assert!((mean[j] - g[j]).abs() < 1e-12);
        }
        assert!((var - 0.01).abs() < 1e-12, "{var}");
        assert!((p.f(&x) - p.f_star - p.gap(&x)).abs() < 1e-12);
    }

    #[test]
    fn noiseless_plain_descent_is_monotone() {
        let p = one_d(0.0);
        let cfg = FsgConvexConfig { beta: 0.0, slow_noise: 0.0, ..Default::default() };
        let x0 = vec![p.x_star[0] + 2.0];
        let tr = run_fsg_convex(&p, &cfg, &x0, 50, &mut Rng::new(1)).unwrap();
        let gaps: Vec<f64> = tr.iterates.iter().map(|x| p.gap(x)).collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let p = one_d(0.0);
        let cfg = FsgConvexConfig { slow_noise: 0.0, ..Default::default() };
        let tr = run_fsg_convex(&p, &cfg, &p.x_star.clone(), 30, &mut Rng::new(1)).unwrap();
        assert!(tr.iterates.iter().all(|x| p.gap(x) == 0.0));
    }

    #[test]
    fn pk_identity_on_random_run() {
        let p = one_d(0.1);
        let cfg = FsgConvexConfig { beta: 0.7, ..Default::default() };
        let tr = run_fsg_convex(&p, &cfg, &[3.0], 100, &mut Rng::new(9)).unwrap();
        assert!(pk_recursion_check(&tr, 0.7).unwrap() < 1e-10);
        assert!(tr.average_drift() < 1e-12);
    }

    #[test]
    fn pk_needs_stored_terms() {
        let p = one_d(0.1);
        let mut tr = run_fsg_convex(&p, &FsgConvexConfig::default(), &[1.0], 10, &mut Rng::new(0)).unwrap();
        tr.slow_errors.pop();
        assert!(matches!(pk_recursion_check(&tr, 0.5), Err(LabError::Contract(_))));
    }

    #[test]
    fn planted_rates() {
        let half: Vec<(usize, f64)> = log_grid(100, 10_000, 7)
            .into_iter()
            .map(|t| (t, 1.0 / ((t + 1) as f64).sqrt()))
            .collect();
        assert!((rate_fit(&half).unwrap() + 0.5).abs() < 1e-6);
        let one: Vec<(usize, f64)> = half.iter().map(|&(t, _)| (t, 1.0 / (t + 1) as f64)).collect();
        assert!((rate_fit(&one).unwrap() + 1.0).abs() < 1e-6);
    }

    #[test]
    fn rate_fit_reports_bad_index() {
        let pts = vec![(100, 1.0), (1000, 0.0), (5000, 0.1)];
        assert!(matches!(rate_fit(&pts), Err(LabError::Fit { index: 1, .. })));
    }

    #[test]
    fn noiseless_two_d_momentum_converges() {
        let p = ConvexProblem::quadratic(2, 2, 0.0, &mut Rng::new(4)).unwrap();
        let cfg = FsgConvexConfig { beta: 0.5, slow_noise: 0.0, ..Default::default() };
        let x0: Vec<f64> = p.x_star.iter().map(|v| v + 1.0).collect();
        let short = run_fsg_convex(&p, &cfg, &x0, 100, &mut Rng::new(0)).unwrap();
        let long = run_fsg_convex(&p, &cfg, &x0, 10_000, &mut Rng::new(0)).unwrap();
        assert!(p.gap(long.final_average()) * 10.0 <= p.gap(short.final_average()));
    }
}
