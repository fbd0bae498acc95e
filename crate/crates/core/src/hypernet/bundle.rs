//! Shared hypernetworks plus the per-layer pieces that route a layer's
//! gradient history through the slow-net.
//!
//! Token pipeline for layer `i` with a window of `m` stored gradients of
//! length `ξ`:
//!
//! 1. tokens `[E_i ; h_1·W_a ; … ; h_{ξm}·W_a]`, `ξm + 1` rows of width `d`
//! 2. slow-net over the whole sequence
//! 3. keep the last `ξ` outputs, map each to a scalar with `W_b`
//! 4. reshape to the layer's gradient shape

use serde::{Deserialize, Serialize};

use super::fast::FastNet;
use super::lstm::{LstmCache, LstmCell};
use super::selective::{BlockCache, SelectiveBlock};
use super::ParamSet;
use crate::error::{LabError, Result};
use crate::ops::{matmul, matmul_nt, matmul_tn};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlowKind {
    SelectiveSsm,
    Lstm,
    Off,
}

impl SlowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SlowKind::SelectiveSsm => "selective-ssm",
            SlowKind::Lstm => "lstm",
            SlowKind::Off => "off",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperNetConfig {
    pub fast_hidden: usize,
    pub d: usize,
    pub expand: usize,
    pub state_dim: usize,
    pub slow: SlowKind,
    pub n_layers: usize,
}

impl Default for HyperNetConfig {
    fn default() -> Self {
        Self {
            fast_hidden: 100,
            d: 16,
            expand: 2,
            state_dim: 8,
            slow: SlowKind::SelectiveSsm,
            n_layers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SlowNet {
    Ssm(SelectiveBlock),
    Lstm(LstmCell),
}

impl SlowNet {
    fn zeros_like(&self) -> Self {
        match self {
            SlowNet::Ssm(b) => SlowNet::Ssm(b.zeros_like()),
            SlowNet::Lstm(c) => SlowNet::Lstm(c.zeros_like()),
        }
    }

    fn named(&self) -> Vec<(String, &Tensor)> {
        match self {
            SlowNet::Ssm(b) => b.named_tensors(),
            SlowNet::Lstm(c) => c.named_tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            SlowNet::Ssm(b) => b.tensors_mut(),
            SlowNet::Lstm(c) => c.tensors_mut(),
        }
    }
}

#[derive(Clone, Debug)]
enum InnerCache {
    Ssm(BlockCache),
    Lstm(LstmCache),
}

/// Everything [`HyperNetBundle::slow_backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct SlowCache {
    layer_index: usize,
    window: Vec<f64>,
    inner: InnerCache,
    kept: Tensor,
    out_shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperNetBundle {
    pub fast: FastNet,
    pub slow: Option<SlowNet>,
    /// Layer recognition embeddings, one row per binarized layer.
    pub lre: Tensor,
    /// `W_a`, `1×d`.
    pub token_proj: Tensor,
    /// `W_b`, `d×1`.
    pub head_proj: Tensor,
}

impl HyperNetBundle {
    pub fn init(cfg: &HyperNetConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.n_layers == 0 || cfg.d == 0 {
            return Err(LabError::Contract("hypernet bundle needs n_layers >= 1 and d >= 1".into()));
        }
        let mut fast_rng = rng.split(1);
        let mut slow_rng = rng.split(2);
        let mut proj_rng = rng.split(3);
        let fast = FastNet::init(cfg.fast_hidden, &mut fast_rng)?;
        let slow = match cfg.slow {
            SlowKind::SelectiveSsm => Some(SlowNet::Ssm(SelectiveBlock::init(
                cfg.d,
                cfg.expand,
                cfg.state_dim,
                &mut slow_rng,
            )?)),
            SlowKind::Lstm => Some(SlowNet::Lstm(LstmCell::init(cfg.d, &mut slow_rng)?)),
            SlowKind::Off => None,
        };
        let sd = 1.0 / (cfg.d as f64).sqrt();
        // The head starts at zero, so the slow-net contributes nothing until
        // it has learned something; the rest of the slow path still receives
        // gradient as soon as the head moves.
        Ok(Self {
            fast,
            slow,
            lre: Tensor::randn(&[cfg.n_layers, cfg.d], sd, &mut proj_rng),
            token_proj: Tensor::randn(&[1, cfg.d], 1.0, &mut proj_rng),
            head_proj: Tensor::zeros(&[cfg.d, 1]),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fast: self.fast.zeros_like(),
            slow: self.slow.as_ref().map(SlowNet::zeros_like),
            lre: Tensor::zeros(self.lre.shape()),
            token_proj: Tensor::zeros(self.token_proj.shape()),
            head_proj: Tensor::zeros(self.head_proj.shape()),
        }
    }

    pub fn n_layers(&self) -> usize {
        self.lre.shape()[0]
    }

    pub fn d(&self) -> usize {
        self.lre.shape()[1]
    }

    pub fn slow_kind(&self) -> SlowKind {
        match self.slow {
            Some(SlowNet::Ssm(_)) => SlowKind::SelectiveSsm,
            Some(SlowNet::Lstm(_)) => SlowKind::Lstm,
            None => SlowKind::Off,
        }
    }

    fn tokens(&self, layer_index: usize, window: &[f64]) -> Result<Tensor> {
        let d = self.d();
        let mut x = Vec::with_capacity((window.len() + 1) * d);
        x.extend_from_slice(self.lre.row(layer_index));
        let wa = self.token_proj.data();
        for &h in window {
            x.extend(wa.iter().map(|a| h * a));
        }
        Tensor::new(vec![window.len() + 1, d], x)
    }

    /// Slow gradient for `layer_index` from its history window
    /// (`(ξ·m)×1`, oldest first). `out_shape` is the layer's weight shape.
    pub fn slow_forward(
        &self,
        layer_index: usize,
        window: &Tensor,
        out_shape: &[usize],
    ) -> Result<(Tensor, SlowCache)> {
        if layer_index >= self.n_layers() {
            return Err(LabError::Index {
                index: layer_index,
                len: self.n_layers(),
            });
        }
        if window.is_empty() {
            return Err(LabError::EmptyHistory { layer: layer_index });
        }
        let xi: usize = out_shape.iter().product();
        if xi == 0 || !window.len().is_multiple_of(xi) {
            return Err(LabError::dim("slow_forward", window.shape(), out_shape));
        }
        let slow = self
            .slow
            .as_ref()
            .ok_or_else(|| LabError::Contract("slow_forward called with the slow-net off".into()))?;
        let x = self.tokens(layer_index, window.data())?;
        let (kept, inner) = match slow {
            SlowNet::Ssm(b) => {
                let (y, c) = b.forward(&x, xi)?;
                (y, InnerCache::Ssm(c))
            }
            SlowNet::Lstm(cell) => {
                let (y, c) = cell.forward(&x, xi)?;
                (y, InnerCache::Lstm(c))
            }
        };
        let out = matmul(&kept, &self.head_proj)?.reshape(out_shape)?;
        let cache = SlowCache {
            layer_index,
            window: window.data().to_vec(),
            inner,
            kept,
            out_shape: out_shape.to_vec(),
        };
        Ok((out, cache))
    }

    /// Reverse pass of [`slow_forward`](Self::slow_forward). The result is
    /// bundle-shaped; its fast-net part is zero.
    pub fn slow_backward(&self, cache: &SlowCache, cotangent: &Tensor) -> Result<HyperNetBundle> {
        if cotangent.shape() != cache.out_shape.as_slice() {
            return Err(LabError::dim("slow_backward", cotangent.shape(), &cache.out_shape));
        }
        let xi = cotangent.len();
        let cot = Tensor::new(vec![xi, 1], cotangent.data().to_vec())?;
        let mut g = self.zeros_like();
        g.head_proj = matmul_tn(&cache.kept, &cot)?;
        let d_kept = matmul_nt(&cot, &self.head_proj)?;
        let dx = match (&cache.inner, self.slow.as_ref(), g.slow.as_mut()) {
            (InnerCache::Ssm(c), Some(SlowNet::Ssm(b)), Some(SlowNet::Ssm(gb))) => {
                let (pg, dx) = b.backward(c, &d_kept)?;
                *gb = pg;
                dx
            }
            (InnerCache::Lstm(c), Some(SlowNet::Lstm(cell)), Some(SlowNet::Lstm(gc))) => {
                let (pg, dx) = cell.backward(c, &d_kept)?;
                *gc = pg;
                dx
            }
            _ => return Err(LabError::Contract("slow cache does not match the slow-net".into())),
        };
        let d = self.d();
        let i = cache.layer_index;
        g.lre.data_mut()[i * d..(i + 1) * d].copy_from_slice(dx.row(0));
        let wa = g.token_proj.data_mut();
        for (r, &h) in cache.window.iter().enumerate() {
            for (a, v) in wa.iter_mut().zip(dx.row(r + 1)) {
                *a += h * v;
            }
        }
        Ok(g)
    }
}

impl ParamSet for HyperNetBundle {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .fast
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (format!("fast.{n}"), t))
            .collect();
        if let Some(s) = &self.slow {
            out.extend(s.named().into_iter().map(|(n, t)| (format!("slow.{n}"), t)));
        }
        out.push(("lre".into(), &self.lre));
        out.push(("token_proj".into(), &self.token_proj));
        out.push(("head_proj".into(), &self.head_proj));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.fast.tensors_mut();
        if let Some(s) = &mut self.slow {
            out.extend(s.tensors_mut());
        }
        out.push(&mut self.lre);
        out.push(&mut self.token_proj);
        out.push(&mut self.head_proj);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(kind: SlowKind) -> HyperNetBundle {
        let cfg = HyperNetConfig {
            fast_hidden: 4,
            d: 4,
            expand: 2,
            state_dim: 3,
            slow: kind,
            n_layers: 3,
        };
        HyperNetBundle::init(&cfg, &mut Rng::new(5)).unwrap()
    }

    #[test]
    fn conv_layer_output_shape() {
        let b = bundle(SlowKind::SelectiveSsm);
        let shape = [4, 3, 3, 3];
        let window = Tensor::zeros(&[108 * 6, 1]);
        let (out, cache) = b.slow_forward(1, &window, &shape).unwrap();
        assert_eq!(out.shape(), &shape);
        assert_eq!(cache.window.len() + 1, 649);
    }

    #[test]
    fn zero_history_zero_embedding_zero_output() {
        let mut b = bundle(SlowKind::SelectiveSsm);
        if let Some(SlowNet::Ssm(blk)) = &mut b.slow {
            for t in [&mut blk.b_in, &mut blk.b_gate, &mut blk.b_b, &mut blk.b_c, &mut blk.b_out] {
                t.fill(0.0);
            }
        }
        b.lre.fill(0.0);
        let (out, _) = b.slow_forward(0, &Tensor::zeros(&[12, 1]), &[2, 3]).unwrap();
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn errors() {
        let b = bundle(SlowKind::Lstm);
        let w = Tensor::zeros(&[4, 1]);
        assert!(matches!(b.slow_forward(3, &w, &[4]), Err(LabError::Index { index: 3, len: 3 })));
        assert!(b.slow_forward(0, &w, &[3]).is_err());
        let off = bundle(SlowKind::Off);
        assert!(matches!(off.slow_forward(0, &w, &[4]), Err(LabError::Contract(_))));
    }

    #[test]
    fn lre_gradient_only_in_own_row() {
        for kind in [SlowKind::SelectiveSsm, SlowKind::Lstm] {
            let mut b = bundle(kind);
            let mut rng = Rng::new(8);
            // The head starts at zero, which would block every upstream gradient.
            b.head_proj = Tensor::randn(&[4, 1], 1.0, &mut rng);
            let w = Tensor::randn(&[6, 1], 1.0, &mut rng);
            let (_, cache) = b.slow_forward(2, &w, &[3]).unwrap();
            let g = b.slow_backward(&cache, &Tensor::from_vec(vec![1.0, -0.5, 0.25])).unwrap();
            assert_eq!(g.lre.row(0), &[0.0; 4]);
            assert_eq!(g.lre.row(1), &[0.0; 4]);
            assert!(g.lre.row(2).iter().any(|&v| v != 0.0));
            let z = b.slow_backward(&cache, &Tensor::zeros(&[3])).unwrap();
            assert!(z.tensors().iter().all(|t| t.max_abs() == 0.0));
        }
    }
}
