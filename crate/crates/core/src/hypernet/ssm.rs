//! Diagonal state-space primitives.
//!
//! Continuous system `h' = A h + B x`, `y = C h` with diagonal `A`,
//! discretised by zero-order hold:
//!
//! ```text
//! Ā = exp(ΔA)
//! B̄ = (ΔA)⁻¹ (exp(ΔA) − I) · ΔB
//! ```
//!
//! and evaluated either as the recurrence `h_t = Ā h_{t−1} + B̄ x_t`,
//! `y_t = C h_t` or, for time-invariant parameters, as the causal
//! convolution with kernel `K̄ = (CB̄, CĀB̄, …, CĀ^{L−1}B̄)`.

use crate::error::{LabError, Result};

/// Per-channel `|ΔA|` below which `B̄ = ΔB` is used.
pub const ZOH_LIMIT: f64 = 1e-8;

const SERIES_LIMIT: f64 = 1e-4;

/// ZOH for one diagonal entry: returns `(Ā, ψ)` with `B̄ = ψ·B`.
#[inline]
pub(crate) fn zoh_scalar(a: f64, delta: f64) -> (f64, f64) {
    let z = delta * a;
    let a_bar = z.exp();
    let psi = if z.abs() < ZOH_LIMIT {
        delta
    } else if z.abs() < 0.1 {
        delta * z.exp_m1() / z
    } else {
        (a_bar - 1.0) / a
    };
    (a_bar, psi)
}

/// Partials of [`zoh_scalar`]: `(∂Ā/∂Δ, ∂Ā/∂A, ∂ψ/∂Δ, ∂ψ/∂A)`.
#[inline]
pub(crate) fn zoh_scalar_grad(a: f64, delta: f64, a_bar: f64) -> (f64, f64, f64, f64) {
    let z = delta * a;
    let dpsi_da = if z.abs() < SERIES_LIMIT {
        delta * delta * (0.5 + z / 3.0 + z * z / 8.0)
    } else {
        (z * a_bar - z.exp_m1()) / (a * a)
    };
    (a * a_bar, delta * a_bar, a_bar, dpsi_da)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discretized {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
}

/// Zero-order hold for diagonal `A` (given as its diagonal) and input
/// vector `B`, both of length N.
pub fn ssm_discretize(a_diag: &[f64], b: &[f64], delta: f64) -> Result<Discretized> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(LabError::Domain(format!("ZOH step must be positive, got {delta}")));
    }
    if a_diag.len() != b.len() {
        return Err(LabError::dim("ssm_discretize", &[a_diag.len()], &[b.len()]));
    }
    let (a_bar, b_bar) = a_diag
        .iter()
        .zip(b)
        .map(|(&a, &bv)| {
            let (ab, psi) = zoh_scalar(a, delta);
            (ab, psi * bv)
        })
        .unzip();
    Ok(Discretized { a_bar, b_bar })
}

/// Discrete parameters for one time step of a single-input single-output
/// diagonal system with N states.
#[derive(Clone, Debug, PartialEq)]
pub struct StepParams {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub c: Vec<f64>,
}

impl StepParams {
    pub fn new(a_bar: Vec<f64>, b_bar: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if a_bar.len() != b_bar.len() || a_bar.len() != c.len() || a_bar.is_empty() {
            return Err(LabError::dim(
                "StepParams",
                &[a_bar.len(), b_bar.len()],
                &[c.len()],
            ));
        }
        Ok(Self { a_bar, b_bar, c })
    }

    pub fn from_discretized(d: Discretized, c: Vec<f64>) -> Result<Self> {
        Self::new(d.a_bar, d.b_bar, c)
    }

    pub fn state_dim(&self) -> usize {
        self.a_bar.len()
    }
}

/// Either one parameter set for every step or one per step.
#[derive(Clone, Debug)]
pub enum SsmSchedule {
    Invariant(StepParams),
    Selective(Vec<StepParams>),
}

impl SsmSchedule {
    fn step(&self, t: usize) -> &StepParams {
        match self {
            SsmSchedule::Invariant(p) => p,
            SsmSchedule::Selective(ps) => &ps[t],
        }
    }
}

/// Linear recurrence from `h_0 = 0`.
pub fn ssm_scan(schedule: &SsmSchedule, x: &[f64]) -> Result<Vec<f64>> {
    if let SsmSchedule::Selective(ps) = schedule {
        if ps.len() != x.len() {
            return Err(LabError::dim("ssm_scan", &[ps.len()], &[x.len()]));
        }
        let n = ps.first().map_or(0, StepParams::state_dim);
        if ps.iter().any(|p| p.state_dim() != n) {
            return Err(LabError::Contract("selective steps disagree on state size".into()));
        }
    }
    let n = schedule.step(0).state_dim();
    let mut h = vec![0.0; n];
    let mut y = Vec::with_capacity(x.len());
    for (t, &xt) in x.iter().enumerate() {
        let p = schedule.step(t);
        let mut yt = 0.0;
        for i in 0..n {
            h[i] = p.a_bar[i] * h[i] + p.b_bar[i] * xt;
            yt += p.c[i] * h[i];
        }
        y.push(yt);
    }
    Ok(y)
}

/// `K̄_k = C Ā^k B̄` for `k < len`.
pub fn ssm_kernel(p: &StepParams, len: usize) -> Vec<f64> {
    let mut pow = p.b_bar.clone();
    let mut k = Vec::with_capacity(len);
    for _ in 0..len {
        k.push(p.c.iter().zip(&pow).map(|(c, v)| c * v).sum());
        for (v, a) in pow.iter_mut().zip(&p.a_bar) {
            *v *= a;
        }
    }
    k
}

/// Causal convolution `y = x * K̄`; time-invariant schedules only.
pub fn ssm_conv(schedule: &SsmSchedule, x: &[f64]) -> Result<Vec<f64>> {
    let p = match schedule {
        SsmSchedule::Invariant(p) => p,
        SsmSchedule::Selective(_) => {
            return Err(LabError::Contract(
                "global convolution needs time-invariant parameters".into(),
            ))
        }
    };
    let kernel = ssm_kernel(p, x.len());
    Ok((0..x.len())
        .map(|t| (0..=t).map(|s| kernel[t - s] * x[s]).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_system(a_bar: f64, b_bar: f64, c: f64) -> SsmSchedule {
        SsmSchedule::Invariant(StepParams::new(vec![a_bar], vec![b_bar], vec![c]).unwrap())
    }

    #[test]
    fn zoh_scalar_reference() {
        let d = ssm_discretize(&[-1.0], &[1.0], 0.1).unwrap();
        assert!((d.a_bar[0] - (-0.1f64).exp()).abs() < 1e-15);
        assert!((d.a_bar[0] - 0.904837).abs() < 1e-6);
        assert!((d.b_bar[0] - 0.0951626).abs() < 1e-7);
    }

    #[test]
    fn zoh_small_step_limit() {
        let delta = 1e-6;
        let d = ssm_discretize(&[-2.0], &[3.0], delta).unwrap();
        assert!((d.a_bar[0] - 1.0).abs() < 1e-5);
        assert!((d.b_bar[0] - delta * 3.0).abs() < 1e-10);
    }

    #[test]
    fn zoh_zero_a_guard() {
        let d = ssm_discretize(&[0.0, 0.0], &[2.0, -1.0], 0.25).unwrap();
        assert_eq!(d.a_bar, vec![1.0, 1.0]);
        assert_eq!(d.b_bar, vec![0.5, -0.25]);
    }

    #[test]
    fn zoh_rejects_nonpositive_step() {
        assert!(matches!(ssm_discretize(&[-1.0], &[1.0], 0.0), Err(LabError::Domain(_))));
        assert!(ssm_discretize(&[-1.0], &[1.0], -0.5).is_err());
    }

    #[test]
    fn scan_zero_input() {
        let s = scalar_system(0.9, 1.0, 2.0);
        assert_eq!(ssm_scan(&s, &[0.0; 5]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn scan_hand_unrolled() {
        let s = scalar_system(0.5, 1.0, 1.0);
        assert_eq!(ssm_scan(&s, &[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn kernel_hand_expanded() {
        let p = StepParams::new(vec![0.5], vec![1.0], vec![1.0]).unwrap();
        assert_eq!(ssm_kernel(&p, 3), vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn conv_single_tap() {
        let s = scalar_system(0.3, 2.0, 1.5);
        assert_eq!(ssm_conv(&s, &[4.0]).unwrap(), vec![1.5 * 2.0 * 4.0]);
    }

    #[test]
    fn conv_refuses_selective() {
        let p = StepParams::new(vec![0.5], vec![1.0], vec![1.0]).unwrap();
        let s = SsmSchedule::Selective(vec![p]);
        assert!(matches!(ssm_conv(&s, &[1.0]), Err(LabError::Contract(_))));
    }

    #[test]
    fn selective_length_mismatch() {
        let p = StepParams::new(vec![0.5], vec![1.0], vec![1.0]).unwrap();
        let s = SsmSchedule::Selective(vec![p.clone(), p]);
        assert!(matches!(ssm_scan(&s, &[1.0]), Err(LabError::Dimension { .. })));
    }

    #[test]
    fn zoh_partials_match_differences() {
        for &(a, delta) in &[(-1.3, 0.2), (-0.5, 1e-5), (-4.0, 0.7), (-1e-3, 0.05)] {
            let (ab, _) = zoh_scalar(a, delta);
            let (dab_dd, dab_da, dpsi_dd, dpsi_da) = zoh_scalar_grad(a, delta, ab);
            let h = 1e-7;
            let fd = |f: &dyn Fn(f64, f64) -> f64, wrt_a: bool| {
                if wrt_a {
                    (f(a + h, delta) - f(a - h, delta)) / (2.0 * h)
                } else {
                    (f(a, delta + h) - f(a, delta - h)) / (2.0 * h)
                }
            };
            let abar = |a: f64, d: f64| zoh_scalar(a, d).0;
            let psi = |a: f64, d: f64| zoh_scalar(a, d).1;
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-6 * (1.0 + y.abs());
            assert!(close(fd(&abar, false), dab_dd));
            assert!(close(fd(&abar, true), dab_da));
            assert!(close(fd(&psi, false), dpsi_dd));
            assert!(close(fd(&psi, true), dpsi_da), "{a} {delta}");
        }
    }
}
