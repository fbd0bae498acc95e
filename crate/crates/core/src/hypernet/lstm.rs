//! Single-layer LSTM, the alternative slow-net. Hidden size equals the token
//! width; gate order in the packed matrices is `i, f, g, o`.

use super::{sigmoid, ParamSet};
use crate::error::{LabError, Result};
use crate::ops::{matmul_nt, matmul_tn};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug)]
pub struct LstmCache {
    x: Tensor,
    /// Activated gates per step, `[L, 4d]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
    keep: usize,
}

impl LstmCell {
    pub fn init(d: usize, rng: &mut Rng) -> Result<Self> {
        if d == 0 {
            return Err(LabError::Contract("LSTM width must be positive".into()));
        }
        let s = 1.0 / (d as f64).sqrt();
        Ok(Self {
            w_x: Tensor::uniform(&[d, 4 * d], -s, s, rng),
            w_h: Tensor::uniform(&[d, 4 * d], -s, s, rng),
            b: Tensor::zeros(&[4 * d]),
        })
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            w_x: Tensor::zeros(&[d, 4 * d]),
            w_h: Tensor::zeros(&[d, 4 * d]),
            b: Tensor::zeros(&[4 * d]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.width())
    }

    pub fn width(&self) -> usize {
        self.w_x.shape()[0]
    }

    /// Runs the sequence `x[L×d]` from zero state; returns the last `keep`
    /// hidden states.
    pub fn forward(&self, x: &Tensor, keep: usize) -> Result<(Tensor, LstmCache)> {
        let (len, d) = x.dims2()?;
        if d != self.width() {
            return Err(LabError::dim("LstmCell::forward", x.shape(), self.w_x.shape()));
        }
        if keep == 0 || keep > len {
            return Err(LabError::Contract(format!("cannot keep {keep} of {len} tokens")));
        }
        let g4 = 4 * d;
        let wx = self.w_x.data();
        let wh = self.w_h.data();
        let mut gates = vec![0.0; len * g4];
        let mut cs = vec![0.0; len * d];
        let mut hs = vec![0.0; len * d];
        let mut h = vec![0.0; d];
        let mut c = vec![0.0; d];
        let mut pre = vec![0.0; g4];
        for t in 0..len {
            pre.copy_from_slice(self.b.data());
            let xt = x.row(t);
            for k in 0..d {
                let (xv, hv) = (xt[k], h[k]);
                let (rx, rh) = (&wx[k * g4..(k + 1) * g4], &wh[k * g4..(k + 1) * g4]);
                for j in 0..g4 {
                    pre[j] += xv * rx[j] + hv * rh[j];
                }
            }
            let gt = &mut gates[t * g4..(t + 1) * g4];
            for j in 0..d {
                let i = sigmoid(pre[j]);
                let f = sigmoid(pre[d + j]);
                let g = pre[2 * d + j].tanh();
                let o = sigmoid(pre[3 * d + j]);
                c[j] = f * c[j] + i * g;
                h[j] = o * c[j].tanh();
                gt[j] = i;
                gt[d + j] = f;
                gt[2 * d + j] = g;
                gt[3 * d + j] = o;
            }
            cs[t * d..(t + 1) * d].copy_from_slice(&c);
            hs[t * d..(t + 1) * d].copy_from_slice(&h);
        }
        let out = Tensor::new(vec![keep, d], hs[(len - keep) * d..].to_vec())?;
        Ok((
            out,
            LstmCache {
                x: x.clone(),
                gates,
                c: cs,
                h: hs,
                keep,
            },
        ))
    }

    /// Backpropagation through time.
    pub fn backward(&self, cache: &LstmCache, d_out: &Tensor) -> Result<(LstmCell, Tensor)> {
        let (len, d) = cache.x.dims2()?;
        if d_out.shape() != [cache.keep, d] {
            return Err(LabError::dim("LstmCell::backward", d_out.shape(), &[cache.keep, d]));
        }
        let g4 = 4 * d;
        let start = len - cache.keep;
        let mut d_pre = vec![0.0; len * g4];
        let mut dh = vec![0.0; d];
        let mut dc = vec![0.0; d];
        let wh = self.w_h.data();
        for t in (0..len).rev() {
            if t >= start {
                for (a, b) in dh.iter_mut().zip(d_out.row(t - start)) {
                    *a += b;
                }
            }
            let gt = &cache.gates[t * g4..(t + 1) * g4];
            let ct = &cache.c[t * d..(t + 1) * d];
            let dp = &mut d_pre[t * g4..(t + 1) * g4];
            for j in 0..d {
                let (i, f, g, o) = (gt[j], gt[d + j], gt[2 * d + j], gt[3 * d + j]);
                let tc = ct[j].tanh();
                let c_prev = if t == 0 { 0.0 } else { cache.c[(t - 1) * d + j] };
                let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
                dp[j] = dct * g * i * (1.0 - i);
                dp[d + j] = dct * c_prev * f * (1.0 - f);
                dp[2 * d + j] = dct * i * (1.0 - g * g);
                dp[3 * d + j] = dh[j] * tc * o * (1.0 - o);
                dc[j] = dct * f;
            }
            for k in 0..d {
                let row = &wh[k * g4..(k + 1) * g4];
                dh[k] = row.iter().zip(dp.iter()).map(|(w, g)| w * g).sum();
            }
        }
        let d_pre = Tensor::new(vec![len, g4], d_pre)?;
        let mut h_prev = vec![0.0; len * d];
        h_prev[d..].copy_from_slice(&cache.h[..(len - 1) * d]);
        let h_prev = Tensor::new(vec![len, d], h_prev)?;
        let mut b = vec![0.0; g4];
        for row in d_pre.data().chunks(g4) {
            for (a, v) in b.iter_mut().zip(row) {
                *a += v;
            }
        }
        let grads = LstmCell {
            w_x: matmul_tn(&cache.x, &d_pre)?,
            w_h: matmul_tn(&h_prev, &d_pre)?,
            b: Tensor::from_vec(b),
        };
        let dx = matmul_nt(&d_pre, &self.w_x)?;
        Ok((grads, dx))
    }
}

impl ParamSet for LstmCell {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_x".into(), &self.w_x),
            ("w_h".into(), &self.w_h),
            ("b".into(), &self.b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.b]
    }
}
