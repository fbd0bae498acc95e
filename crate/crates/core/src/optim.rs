//! Base optimizers.
//!
//! Every update goes through [`Optimizer::plan`], which is pure: it returns
//! the weights the optimizer *would* produce for a given gradient together
//! with the elementwise derivative of those weights with respect to the
//! gradient. [`Optimizer::step`] applies exactly the same arithmetic and
//! stores the new moments, so a planned update and its committed
//! counterpart agree bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam()
    }
}

impl OptimizerConfig {
    pub fn sgd() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd_momentum(momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            momentum,
            ..Self::sgd()
        }
    }

    pub fn adam() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::sgd()
        }
    }
}

/// Per-parameter accumulators: velocity (SGD-M) or first/second moments
/// (Adam). Plain SGD keeps them empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub slots: Vec<Slot>,
}

/// Result of [`Optimizer::plan`].
#[derive(Clone, Debug)]
pub struct Planned {
    pub w: Tensor,
    /// `∂w_new/∂g`, elementwise.
    pub jacobian: Tensor,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub state: OptimizerState,
}

struct SlotUpdate {
    w: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    jac: Vec<f64>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, shapes: &[Vec<usize>]) -> Self {
        let slots = shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                match config.kind {
                    OptimizerKind::Sgd => Slot { m: Vec::new(), v: Vec::new() },
                    OptimizerKind::SgdMomentum => Slot { m: vec![0.0; n], v: Vec::new() },
                    OptimizerKind::Adam => Slot { m: vec![0.0; n], v: vec![0.0; n] },
                }
            })
            .collect();
        Self {
            config,
            state: OptimizerState { step: 0, slots },
        }
    }

    pub fn for_tensors(config: OptimizerConfig, tensors: &[&Tensor]) -> Self {
        let shapes: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape().to_vec()).collect();
        Self::new(config, &shapes)
    }

    pub fn num_slots(&self) -> usize {
        self.state.slots.len()
    }

    fn update(&self, slot: usize, w: &Tensor, g: &Tensor, lr: f64) -> Result<SlotUpdate> {
        w.expect_same_shape("optimizer update", g)?;
        let s = self.state.slots.get(slot).ok_or(LabError::Index {
            index: slot,
            len: self.state.slots.len(),
        })?;
        let cfg = &self.config;
        let wd = w.data();
        let gd = g.data();
        match cfg.kind {
            OptimizerKind::Sgd => Ok(SlotUpdate {
                w: wd.iter().zip(gd).map(|(w, g)| w - lr * g).collect(),
                m: Vec::new(),
                v: Vec::new(),
                jac: vec![-lr; wd.len()],
            }),
            OptimizerKind::SgdMomentum => {
                if s.m.len() != wd.len() {
                    return Err(LabError::dim("sgd-momentum slot", &[s.m.len()], w.shape()));
                }
                let m: Vec<f64> = s
                    .m
                    .iter()
                    .zip(gd)
                    .map(|(v, g)| cfg.momentum * v - lr * g)
                    .collect();
                Ok(SlotUpdate {
                    w: wd.iter().zip(&m).map(|(w, v)| w + v).collect(),
                    m,
                    v: Vec::new(),
                    jac: vec![-lr; wd.len()],
                })
            }
            OptimizerKind::Adam => {
                if s.m.len() != wd.len() {
                    return Err(LabError::dim("adam slot", &[s.m.len()], w.shape()));
                }
                let t = (self.state.step + 1) as i32;
                let bc1 = 1.0 - cfg.beta1.powi(t);
                let bc2 = 1.0 - cfg.beta2.powi(t);
                let n = wd.len();
                let (mut m, mut v, mut nw, mut jac) =
                    (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                for i in 0..n {
                    let gi = gd[i];
                    m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * gi;
                    v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * gi * gi;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    let root = v_hat.sqrt();
                    let den = root + cfg.eps;
                    nw[i] = wd[i] - lr * (m_hat / den);
                    let d_root = if root > 0.0 {
                        (1.0 - cfg.beta2) * gi / (bc2 * root)
                    } else {
                        0.0
                    };
                    jac[i] = -lr * ((1.0 - cfg.beta1) / bc1 / den - m_hat / (den * den) * d_root);
                }
                Ok(SlotUpdate { w: nw, m, v, jac })
            }
        }
    }

    /// The update `step` would apply to slot `slot`, without touching state.
    pub fn plan(&self, slot: usize, w: &Tensor, g: &Tensor, lr: f64) -> Result<Planned> {
        let u = self.update(slot, w, g, lr)?;
        Ok(Planned {
            w: Tensor::new(w.shape().to_vec(), u.w)?,
            jacobian: Tensor::new(w.shape().to_vec(), u.jac)?,
        })
    }

    /// Updates every parameter in place and advances the step counter once.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64) -> Result<()> {
        if params.len() != self.state.slots.len() || grads.len() != params.len() {
            return Err(LabError::dim(
                "Optimizer::step",
                &[params.len(), grads.len()],
                &[self.state.slots.len()],
            ));
        }
        let mut updates = Vec::with_capacity(params.len());
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            updates.push(self.update(i, p, g, lr)?);
        }
        for ((p, u), slot) in params.iter_mut().zip(updates).zip(&mut self.state.slots) {
            p.data_mut().copy_from_slice(&u.w);
            slot.m = u.m;
            slot.v = u.v;
        }
        self.state.step += 1;
        Ok(())
    }
}

/// `x ← x − lr·g`.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64) -> Result<()> {
    let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
    Optimizer::new(OptimizerConfig::sgd(), &shapes).step(params, grads, lr)
}

/// `v ← μ·v − lr·g; x ← x + v`.
pub fn sgd_momentum_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    opt: &mut Optimizer,
    lr: f64,
) -> Result<()> {
    if opt.config.kind != OptimizerKind::SgdMomentum {
        return Err(LabError::Contract("sgd_momentum_step needs an SGD-momentum state".into()));
    }
    opt.step(params, grads, lr)
}

pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], opt: &mut Optimizer, lr: f64) -> Result<()> {
    if opt.config.kind != OptimizerKind::Adam {
        return Err(LabError::Contract("adam_step needs an Adam state".into()));
    }
    opt.step(params, grads, lr)
}

/// Closed form of the momentum recursion from `v_0 = 0`:
/// `v_T = −α·Σ_k β^{T−1−k}·g_k`.
pub fn momentum_expand(beta: f64, alpha: f64, grads: &[Tensor]) -> Result<Tensor> {
    let first = grads
        .first()
        .ok_or_else(|| LabError::Contract("momentum_expand needs at least one gradient".into()))?;
    let t = grads.len();
    let mut acc = Tensor::zeros(first.shape());
    for (k, g) in grads.iter().enumerate() {
        acc.add_assign(&g.scale(beta.powi((t - 1 - k) as i32)))?;
    }
    Ok(acc.scale(-alpha))
}
