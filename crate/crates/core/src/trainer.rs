//! Quantization-aware training: the fast/slow generated-gradient trainer
//! and the straight-through baseline.
//!
//! # One FSG iteration
//!
//! Let `g` be the gradient with respect to the binarized weights from the
//! previous iteration, `Ŵ, dA` the preprocessed weights and their
//! derivative at the current `W`, and `h` the layer's gradient history
//! (newest entry `g`).
//!
//! 1. `G = α·M_f(g, Ŵ)⊙dA − β·M_s(h)` per binarized layer; full-precision
//!    parameters use their raw previous gradient.
//! 2. `W′` is the base optimizer's planned update of `W` with `G` (or
//!    `W − G` with [`Lookahead::Raw`]).
//! 3. Forward and backward through `Q(A(W′))`; straight-through across `Q`
//!    gives the fresh `g`.
//! 4. `∂ℓ/∂W′ = g⊙A′(W′)` is pulled back through step 2 and step 1 into
//!    both hypernetworks, which take one Adam step.
//! 5. `G` is registered and the optimizer commits its step, so that with
//!    [`Lookahead::Optimizer`] the new `W` equals `W′` bit for bit.
//! 6. The fresh `g` is pushed into each layer's history.
//!
//! The very first iteration only runs step 3 and step 6.
//!
//! `G` uses the descent convention: the optimizer subtracts it, so the
//! realized move is `−α·fast + β·slow` with the learning rate folded in.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{LabError, Result};
use crate::hgs::GradientHistoryBuffer;
use crate::hypernet::{HyperNetBundle, HyperNetConfig, ParamSet, SlowCache, SlowKind};
use crate::metrics::MetricsRecord;
use crate::model::Model;
use crate::ops::softmax_cross_entropy;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::quantize::{preprocess, quantize, QuantLayerState};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fsg,
    Ste,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FastKind {
    Mlp,
    Identity,
    Off,
}

/// How the look-ahead weights `W′` are formed from `G`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lookahead {
    /// The base optimizer's own planned step.
    Optimizer,
    /// `W′ = W − G`.
    Raw,
}

/// Scale at which the hypernetworks see and emit gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperScale {
    /// Raw gradient values in, raw values out.
    None,
    /// Per layer, inputs are divided by `s = rms(g)` and outputs multiplied
    /// by it, so the hypernetworks work on unit-scale signals whatever the
    /// gradient magnitude. `s` is a constant to the hypergradient.
    Rms,
}

/// What goes into the gradient history.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistorySource {
    /// The straight-through gradient with respect to the binarized weights.
    Raw,
    /// The registered composed gradient.
    Composed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub every: usize,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub alpha: f64,
    pub beta: f64,
    pub l: usize,
    #[serde(rename = "base_optimizer")]
    pub optimizer: OptimizerConfig,
    pub lr: f64,
    pub hyper_lr: f64,
    pub epochs: usize,
    pub lr_decay: LrDecay,
    pub batch_size: usize,
    pub seed: u64,
    pub bits: u32,
    pub slow_kind: SlowKind,
    pub fast_kind: FastKind,
    pub lookahead: Lookahead,
    pub history_source: HistorySource,
    pub hyper_scale: HyperScale,
    pub fast_hidden: usize,
    pub d_model: usize,
    pub expand: usize,
    pub state_dim: usize,
    pub record_wall_ms: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Fsg,
            alpha: 1.0,
            beta: 0.3,
            l: 6,
            optimizer: OptimizerConfig::adam(),
            lr: 1e-3,
            hyper_lr: 1e-3,
            epochs: 100,
            lr_decay: LrDecay { every: 30, factor: 0.1 },
            batch_size: 128,
            seed: 0,
            bits: 1,
            slow_kind: SlowKind::SelectiveSsm,
            fast_kind: FastKind::Mlp,
            lookahead: Lookahead::Optimizer,
            history_source: HistorySource::Raw,
            hyper_scale: HyperScale::Rms,
            fast_hidden: 100,
            d_model: 16,
            expand: 2,
            state_dim: 8,
            record_wall_ms: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::LabError as E;
        let bad = |f: &str, m: String| Err(E::config(f, m));
        if self.l == 0 {
            return bad("l", "history length must be >= 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", format!("must be > 0, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta", format!("must lie in [0, 1], got {}", self.beta));
        }
        if !self.alpha.is_finite() {
            return bad("alpha", "must be finite".into());
        }
        if !(self.hyper_lr > 0.0) || !self.hyper_lr.is_finite() {
            return bad("hyper_lr", format!("must be > 0, got {}", self.hyper_lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        if self.bits == 0 || self.bits > 30 {
            return bad("bits", format!("must be in 1..=30, got {}", self.bits));
        }
        if self.lr_decay.every == 0 || !(self.lr_decay.factor > 0.0) {
            return bad("lr_decay", "needs every >= 1 and factor > 0".into());
        }
        if !(0.0..1.0).contains(&self.optimizer.momentum) {
            return bad("momentum", format!("must lie in [0, 1), got {}", self.optimizer.momentum));
        }
        if self.fast_hidden == 0 || self.d_model == 0 || self.expand == 0 || self.state_dim == 0 {
            return bad("hypernet", "sizes must be >= 1".into());
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.factor.powi((epoch / self.lr_decay.every) as i32)
    }

    pub fn hypernet_config(&self, n_layers: usize) -> HyperNetConfig {
        HyperNetConfig {
            fast_hidden: self.fast_hidden,
            d: self.d_model,
            expand: self.expand,
            state_dim: self.state_dim,
            slow: self.slow_kind,
            n_layers: n_layers.max(1),
        }
    }
}

/// `α·g_fast⊙dA − β·g_slow`; an absent slow term counts as zero.
pub fn compose_gradient(
    g_fast: &Tensor,
    g_slow: Option<&Tensor>,
    da_dw: &Tensor,
    alpha: f64,
    beta: f64,
) -> Result<Tensor> {
    g_fast.expect_same_shape("compose_gradient", da_dw)?;
    let fast = g_fast.zip_map(da_dw, |f, d| alpha * f * d)?;
    match g_slow {
        None => Ok(fast),
        Some(s) => fast.zip_map(s, |f, s| f - beta * s),
    }
}

/// Output of [`Trainer::propose`].
#[derive(Clone, Debug)]
pub struct Proposal {
    /// Composed gradients `G`, one per parameter.
    pub updates: Vec<Tensor>,
    /// Look-ahead weights `W′`.
    pub weights: Vec<Tensor>,
    /// `∂W′/∂G`, elementwise.
    pub jacobian: Vec<Tensor>,
    /// Per binarized layer, the hypernetwork scale `s`.
    pub scales: Vec<f64>,
    slow_caches: Vec<Option<SlowCache>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub correct: usize,
    pub batch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
    pub iterations: usize,
}

/// Binarized-inference result over a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    /// Per-sample `(label, predicted class, loss)`.
    pub predictions: Vec<(usize, usize, f64)>,
}

const EVAL_CHUNK: usize = 1024;

#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub bundle: HyperNetBundle,
    pub buffers: Vec<GradientHistoryBuffer>,
    pub quant: Vec<QuantLayerState>,
    pub base_opt: Optimizer,
    pub hyper_opt: Optimizer,
    prev_grads: Option<Vec<Tensor>>,
    pub iteration: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: Model) -> Result<Self> {
        cfg.validate()?;
        let root = Rng::new(cfg.seed);
        let quant_params = model.binarized_params();
        let bundle = HyperNetBundle::init(&cfg.hypernet_config(quant_params.len()), &mut root.split(100))?;
        let buffers = quant_params
            .iter()
            .enumerate()
            .map(|(q, &p)| GradientHistoryBuffer::new(q, cfg.l, model.params[p].len()))
            .collect::<Result<Vec<_>>>()?;
        let quant = quant_params
            .iter()
            .enumerate()
            .map(|(q, &p)| QuantLayerState::new(model.params[p].clone(), q, cfg.bits))
            .collect::<Result<Vec<_>>>()?;
        let base_opt = Optimizer::for_tensors(cfg.optimizer, &model.params.iter().collect::<Vec<_>>());
        let hyper_opt = Optimizer::for_tensors(OptimizerConfig::adam(), &bundle.tensors());
        Ok(Self {
            cfg,
            model,
            bundle,
            buffers,
            quant,
            base_opt,
            hyper_opt,
            prev_grads: None,
            iteration: 0,
        })
    }

    fn quant_param_indices(&self) -> Vec<usize> {
        self.model.binarized_params()
    }

    /// Effective tensors at the committed weights.
    fn current_effective(&self) -> Vec<Tensor> {
        let mut eff = self.model.params.clone();
        for (q, p) in self.quant_param_indices().into_iter().enumerate() {
            eff[p] = self.quant[q].w_b.clone();
        }
        eff
    }

    fn loss_and_grads(&self, x: &Tensor, labels: &[usize], eff: &[Tensor]) -> Result<(StepOutcome, Vec<Tensor>)> {
        if labels.is_empty() {
            return Err(LabError::Contract("empty batch".into()));
        }
        let (logits, tape) = self.model.forward(x, eff)?;
        let ce = softmax_cross_entropy(&logits, labels)?;
        if !ce.loss.is_finite() {
            return Err(LabError::Divergence {
                iteration: self.iteration + 1,
                loss: ce.loss,
            });
        }
        let grads = self.model.backward(&tape, eff, &ce.grad_logits)?;
        Ok((
            StepOutcome {
                loss: ce.loss,
                correct: ce.correct,
                batch: labels.len(),
            },
            grads,
        ))
    }

    fn commit(&mut self, updates: &[Tensor], lr: f64) -> Result<()> {
        let grads: Vec<&Tensor> = updates.iter().collect();
        let mut params: Vec<&mut Tensor> = self.model.params.iter_mut().collect();
        self.base_opt.step(&mut params, &grads, lr)?;
        for (q, p) in self.model.binarized_params().into_iter().enumerate() {
            self.quant[q].set_weights(self.model.params[p].clone())?;
            self.quant[q].registered_grad = updates[p].clone();
        }
        Ok(())
    }

    /// One iteration on a batch with base learning rate `lr`.
    pub fn train_step(&mut self, x: &Tensor, labels: &[usize], lr: f64) -> Result<StepOutcome> {
        let out = match self.cfg.method {
            Method::Ste => self.ste_step(x, labels, lr),
            Method::Fsg => self.fsg_step(x, labels, lr),
        }?;
        self.iteration += 1;
        Ok(out)
    }

    fn ste_step(&mut self, x: &Tensor, labels: &[usize], lr: f64) -> Result<StepOutcome> {
        let eff = self.current_effective();
        let (out, mut grads) = self.loss_and_grads(x, labels, &eff)?;
        for (q, p) in self.quant_param_indices().into_iter().enumerate() {
            grads[p] = self.quant[q].ste_gradient(&grads[p])?;
        }
        self.commit(&grads, lr)?;
        Ok(out)
    }

    fn hypernets_active(&self) -> (bool, bool) {
        let fast = self.cfg.fast_kind == FastKind::Mlp;
        let slow = self.bundle.slow.is_some() && self.cfg.beta != 0.0;
        (fast, slow)
    }

    fn push_history(&mut self, source: &[Tensor]) -> Result<()> {
        for (q, p) in self.quant_param_indices().into_iter().enumerate() {
            self.buffers[q].push(&source[p])?;
        }
        Ok(())
    }

    fn fsg_step(&mut self, x: &Tensor, labels: &[usize], lr: f64) -> Result<StepOutcome> {
        if self.prev_grads.is_none() {
            // First iteration: quantized forward, straight-through backward,
            // no weight update.
            let eff = self.current_effective();
            let (out, grads) = self.loss_and_grads(x, labels, &eff)?;
            match self.cfg.history_source {
                HistorySource::Raw => self.push_history(&grads)?,
                HistorySource::Composed => {
                    let mut composed = grads.clone();
                    for (q, p) in self.quant_param_indices().into_iter().enumerate() {
                        composed[p] = self.quant[q].ste_gradient(&grads[p])?;
                    }
                    self.push_history(&composed)?;
                }
            }
            self.prev_grads = Some(grads);
            return Ok(out);
        }

        let proposal = self.propose(&self.bundle, lr)?;
        let (eff, da_next) = self.lookahead_effective(&proposal.weights)?;
        let (out, grads) = self.loss_and_grads(x, labels, &eff)?;
        let (fast_on, slow_on) = self.hypernets_active();
        if fast_on || slow_on {
            let hg = self.hyper_backward(&proposal, &grads, &da_next)?;
            let grads_h = hg.tensors();
            let mut params_h = self.bundle.tensors_mut();
            self.hyper_opt.step(&mut params_h, &grads_h, self.cfg.hyper_lr)?;
        }
        self.commit(&proposal.updates, lr)?;
        match self.cfg.history_source {
            HistorySource::Raw => self.push_history(&grads)?,
            HistorySource::Composed => self.push_history(&proposal.updates)?,
        }
        self.prev_grads = Some(grads);
        Ok(out)
    }

    /// Gradients generated with `bundle` from the stored previous gradient
    /// and histories, and the look-ahead weights they lead to.
    pub fn propose(&self, bundle: &HyperNetBundle, lr: f64) -> Result<Proposal> {
        let prev = self.prev_grads.as_ref().ok_or_else(|| {
            LabError::Contract("no previous gradient: the first iteration has not run".into())
        })?;
        let slow_on = bundle.slow.is_some() && self.cfg.beta != 0.0;
        let quant_params = self.quant_param_indices();
        let mut updates = prev.clone();
        let mut slow_caches: Vec<Option<SlowCache>> = vec![None; quant_params.len()];
        let mut scales = Vec::with_capacity(quant_params.len());
        for (q, &p) in quant_params.iter().enumerate() {
            let st = &self.quant[q];
            let s = self.hyper_scale(&prev[p]);
            scales.push(s);
            let g_fast = match self.cfg.fast_kind {
                FastKind::Mlp => bundle.fast.forward(&prev[p].scale(1.0 / s), &st.w_hat)?.scale(s),
                FastKind::Identity => prev[p].clone(),
                FastKind::Off => Tensor::zeros(prev[p].shape()),
            };
            let g_slow = if slow_on && !self.buffers[q].is_empty() {
                let window = self.buffers[q].window()?.scale(1.0 / s);
                let (out, cache) = bundle.slow_forward(q, &window, st.w.shape())?;
                slow_caches[q] = Some(cache);
                Some(out.scale(s))
            } else {
                None
            };
            updates[p] = compose_gradient(&g_fast, g_slow.as_ref(), &st.da_dw, self.cfg.alpha, self.cfg.beta)?;
        }
        let mut weights = Vec::with_capacity(updates.len());
        let mut jacobian = Vec::with_capacity(updates.len());
        for (p, w) in self.model.params.iter().enumerate() {
            let (w_next, j) = match self.cfg.lookahead {
                Lookahead::Optimizer => {
                    let plan = self.base_opt.plan(p, w, &updates[p], lr)?;
                    (plan.w, plan.jacobian)
                }
                Lookahead::Raw => (w.sub(&updates[p])?, Tensor::full(w.shape(), -1.0)),
            };
            weights.push(w_next);
            jacobian.push(j);
        }
        Ok(Proposal {
            updates,
            weights,
            jacobian,
            scales,
            slow_caches,
        })
    }

    fn hyper_scale(&self, g: &Tensor) -> f64 {
        match self.cfg.hyper_scale {
            HyperScale::None => 1.0,
            HyperScale::Rms => {
                let rms = (g.dot(g).unwrap_or(0.0) / g.len().max(1) as f64).sqrt();
                if rms > 0.0 && rms.is_finite() { rms } else { 1.0 }
            }
        }
    }

    /// `Q(A(W′))` for binarized parameters (with `A′(W′)`), `W′` otherwise.
    fn lookahead_effective(&self, weights: &[Tensor]) -> Result<(Vec<Tensor>, Vec<Option<Tensor>>)> {
        let mut eff = weights.to_vec();
        let mut da = vec![None; weights.len()];
        for p in self.quant_param_indices() {
            let (w_hat, d) = preprocess(&weights[p])?;
            eff[p] = quantize(&w_hat, self.cfg.bits)?;
            da[p] = Some(d);
        }
        Ok((eff, da))
    }

    /// Pulls `∂ℓ/∂W_b` at the look-ahead point back into the hypernetworks.
    fn hyper_backward(
        &self,
        proposal: &Proposal,
        grads: &[Tensor],
        da_next: &[Option<Tensor>],
    ) -> Result<HyperNetBundle> {
        let prev = self.prev_grads.as_ref().expect("checked by propose");
        let fast_on = self.cfg.fast_kind == FastKind::Mlp;
        let mut hg = self.bundle.zeros_like();
        for (q, p) in self.quant_param_indices().into_iter().enumerate() {
            let da = da_next[p].as_ref().expect("binarized parameter");
            // ∂ℓ/∂G = (∂W′/∂G) ⊙ A′(W′) ⊙ g
            let s = proposal.scales[q];
            let d_g = grads[p].mul(da)?.mul(&proposal.jacobian[p])?.scale(s);
            if fast_on {
                let alpha = self.cfg.alpha;
                let cot = d_g.zip_map(&self.quant[q].da_dw, |c, d| alpha * c * d)?;
                let fg = self.bundle.fast.backward(&prev[p].scale(1.0 / s), &self.quant[q].w_hat, &cot)?;
                hg.fast.accumulate(&fg.params)?;
            }
            if let Some(cache) = &proposal.slow_caches[q] {
                let sg = self.bundle.slow_backward(cache, &d_g.scale(-self.cfg.beta))?;
                hg.accumulate(&sg)?;
            }
        }
        Ok(hg)
    }

    /// Loss at the look-ahead point and the hypernetwork gradient a training
    /// step on this batch would apply, without changing any state.
    pub fn hypernet_gradient(&self, x: &Tensor, labels: &[usize], lr: f64) -> Result<(HyperNetBundle, f64)> {
        let proposal = self.propose(&self.bundle, lr)?;
        let (eff, da_next) = self.lookahead_effective(&proposal.weights)?;
        let (out, grads) = self.loss_and_grads(x, labels, &eff)?;
        Ok((self.hyper_backward(&proposal, &grads, &da_next)?, out.loss))
    }

    /// One pass over `data` in a seeded shuffled order.
    pub fn train_epoch(&mut self, data: &Dataset, epoch: usize) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(LabError::Contract("cannot train on an empty dataset".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        Rng::new(self.cfg.seed).split(10_000 + epoch as u64).shuffle(&mut order);
        let lr = self.cfg.lr_at(epoch);
        let (mut loss, mut correct, mut seen, mut iterations) = (0.0, 0usize, 0usize, 0usize);
        for chunk in order.chunks(self.cfg.batch_size) {
            let (x, labels) = data.batch(chunk)?;
            let out = self.train_step(&x, &labels, lr)?;
            loss += out.loss * out.batch as f64;
            correct += out.correct;
            seen += out.batch;
            iterations += 1;
        }
        Ok(EpochStats {
            loss: loss / seen as f64,
            accuracy: correct as f64 / seen as f64,
            iterations,
        })
    }

    /// Binarized inference over `data`; never mutates the trainer.
    pub fn evaluate(&self, data: &Dataset) -> Result<Evaluation> {
        if data.is_empty() {
            return Err(LabError::Contract("cannot evaluate an empty dataset".into()));
        }
        let eff = self.model.effective_params(self.cfg.bits)?;
        let mut predictions = Vec::with_capacity(data.len());
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(EVAL_CHUNK) {
            let (x, labels) = data.batch(chunk)?;
            let (logits, _) = self.model.forward(&x, &eff)?;
            let (_, k) = logits.dims2()?;
            for (b, &label) in labels.iter().enumerate() {
                let row = logits.row(b);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let log_z = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
                let pred = (0..k).fold(0, |best, j| if row[j] > row[best] { j } else { best });
                predictions.push((label, pred, log_z - row[label]));
            }
        }
        let n = predictions.len() as f64;
        Ok(Evaluation {
            loss: predictions.iter().map(|p| p.2).sum::<f64>() / n,
            accuracy: predictions.iter().filter(|p| p.0 == p.1).count() as f64 / n,
            predictions,
        })
    }

    /// Trains for `cfg.epochs`, returning one `train` row per epoch plus a
    /// `test` row when `test` is given.
    pub fn fit(&mut self, train: &Dataset, test: Option<&Dataset>) -> Result<Vec<MetricsRecord>> {
        let start = Instant::now();
        let mut rows = Vec::new();
        for epoch in 0..self.cfg.epochs {
            let stats = self.train_epoch(train, epoch)?;
            let wall = |s: &Self| if s.cfg.record_wall_ms { start.elapsed().as_millis() as u64 } else { 0 };
            let lr = self.cfg.lr_at(epoch);
            rows.push(MetricsRecord {
                epoch,
                iter: self.iteration,
                split: "train".into(),
                loss: stats.loss,
                accuracy: stats.accuracy,
                lr,
                wall_ms: wall(self),
            });
            if let Some(t) = test {
                let ev = self.evaluate(t)?;
                rows.push(MetricsRecord {
                    epoch,
                    iter: self.iteration,
                    split: "test".into(),
                    loss: ev.loss,
                    accuracy: ev.accuracy,
                    lr,
                    wall_ms: wall(self),
                });
            }
        }
        Ok(rows)
    }

    /// Model, hypernetworks, optimizer states, histories and the iteration
    /// counter.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.insert("iteration", &[1], vec![self.iteration as f64])?;
        for (m, p) in self.model.meta().iter().zip(&self.model.params) {
            ck.insert_tensor(format!("model.{}", m.name), p)?;
        }
        for (name, t) in self.bundle.named_tensors() {
            ck.insert_tensor(format!("hyper.{name}"), t)?;
        }
        for (tag, opt) in [("opt", &self.base_opt), ("hyper_opt", &self.hyper_opt)] {
            ck.insert(format!("{tag}.step"), &[1], vec![opt.state.step as f64])?;
            for (i, s) in opt.state.slots.iter().enumerate() {
                if !s.m.is_empty() {
                    ck.insert(format!("{tag}.{i}.m"), &[s.m.len()], s.m.clone())?;
                }
                if !s.v.is_empty() {
                    ck.insert(format!("{tag}.{i}.v"), &[s.v.len()], s.v.clone())?;
                }
            }
        }
        for b in &self.buffers {
            for (k, e) in b.entries().enumerate() {
                ck.insert(format!("hgs.{}.{k}", b.layer_index()), &[e.len()], e.to_vec())?;
            }
        }
        if let Some(prev) = &self.prev_grads {
            for (i, g) in prev.iter().enumerate() {
                ck.insert_tensor(format!("prev.{i}"), g)?;
            }
        }
        Ok(ck)
    }

    /// Restores state saved by [`checkpoint`](Self::checkpoint) into a
    /// trainer built from the same configuration and architecture.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        self.iteration = ck.tensor("iteration", &[1])?.data()[0] as u64;
        let names: Vec<String> = self.model.meta().iter().map(|m| m.name.clone()).collect();
        for (name, p) in names.iter().zip(self.model.params.iter_mut()) {
            *p = ck.tensor(&format!("model.{name}"), p.shape())?;
        }
        let hyper_names: Vec<String> = self.bundle.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, t) in hyper_names.iter().zip(self.bundle.tensors_mut()) {
            *t = ck.tensor(&format!("hyper.{name}"), t.shape())?;
        }
        for (tag, opt) in [("opt", &mut self.base_opt), ("hyper_opt", &mut self.hyper_opt)] {
            opt.state.step = ck.tensor(&format!("{tag}.step"), &[1])?.data()[0] as u64;
            for (i, s) in opt.state.slots.iter_mut().enumerate() {
                if !s.m.is_empty() {
                    s.m = ck.tensor(&format!("{tag}.{i}.m"), &[s.m.len()])?.into_data();
                }
                if !s.v.is_empty() {
                    s.v = ck.tensor(&format!("{tag}.{i}.v"), &[s.v.len()])?.into_data();
                }
            }
        }
        for b in &mut self.buffers {
            let prefix = format!("hgs.{}.", b.layer_index());
            let entries: Vec<Vec<f64>> = ck
                .entries()
                .iter()
                .filter(|e| e.name.starts_with(&prefix))
                .map(|e| e.data.clone())
                .collect();
            b.restore(entries)?;
        }
        self.prev_grads = if ck.get("prev.0").is_some() {
            Some(
                self.model
                    .params
                    .iter()
                    .enumerate()
                    .map(|(i, p)| ck.tensor(&format!("prev.{i}"), p.shape()))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        for (q, p) in self.model.binarized_params().into_iter().enumerate() {
            self.quant[q].set_weights(self.model.params[p].clone())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticKind};
    use crate::model::LayerSpec;

    fn toy(cfg: TrainConfig) -> (Trainer, Dataset) {
        let mut rng = Rng::new(cfg.seed);
        let model = Model::new(
            vec![LayerSpec::dense(2, 8, true), LayerSpec::Relu, LayerSpec::dense(8, 2, true)],
            &[2],
            &mut rng,
        )
        .unwrap();
        let data = gen_synthetic(SyntheticKind::Blobs, 2, 16, 0.3, &mut rng).unwrap();
        (Trainer::new(cfg, model).unwrap(), data)
    }

    #[test]
    fn compose_cases() {
        let one = Tensor::full(&[2], 1.0);
        assert_eq!(compose_gradient(&one, Some(&one), &one, 1.0, 1.0).unwrap().data(), &[0.0, 0.0]);
        let g = Tensor::from_vec(vec![2.0, -1.0]);
        let d = Tensor::from_vec(vec![0.5, 0.25]);
        assert_eq!(compose_gradient(&g, Some(&one), &d, 3.0, 0.0).unwrap().data(), &[3.0, -0.75]);
        assert!(compose_gradient(&g, None, &Tensor::zeros(&[3]), 1.0, 0.0).is_err());
    }

    #[test]
    fn first_iteration_leaves_weights() {
        let (mut t, data) = toy(TrainConfig {
            d_model: 4,
            fast_hidden: 8,
            ..TrainConfig::default()
        });
        let before = t.model.params.clone();
        let (x, y) = data.batch(&[0, 1, 2, 3]).unwrap();
        t.train_step(&x, &y, 0.01).unwrap();
        assert_eq!(t.model.params, before);
        assert_eq!(t.buffers[0].len(), 1);
        t.train_step(&x, &y, 0.01).unwrap();
        assert_ne!(t.model.params, before);
    }

    #[test]
    fn evaluate_is_pure() {
        let (mut t, data) = toy(TrainConfig {
            d_model: 4,
            fast_hidden: 8,
            batch_size: 8,
            ..TrainConfig::default()
        });
        t.train_epoch(&data, 0).unwrap();
        let ck = t.checkpoint().unwrap().to_bytes();
        let ev = t.evaluate(&data).unwrap();
        assert_eq!(t.checkpoint().unwrap().to_bytes(), ck);
        assert!((0.0..=1.0).contains(&ev.accuracy));
    }

    #[test]
    fn validation_names_field() {
        let cfg = TrainConfig { l: 0, ..TrainConfig::default() };
        match cfg.validate() {
            Err(LabError::Config { field, .. }) => assert_eq!(field, "l"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted() {
        let cfg = TrainConfig {
            d_model: 4,
            fast_hidden: 8,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (mut a, data) = toy(cfg.clone());
        a.train_epoch(&data, 0).unwrap();
        let ck = Checkpoint::from_bytes(&a.checkpoint().unwrap().to_bytes()).unwrap();
        let (mut b, _) = toy(cfg);
        b.restore(&ck).unwrap();
        a.train_epoch(&data, 1).unwrap();
        b.train_epoch(&data, 1).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.bundle, b.bundle);
    }
}
