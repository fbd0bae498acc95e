//! Selective state-space block used as the slow-net.
//!
//! Per token `x_t ∈ R^d`:
//!
//! ```text
//! u_t = W_in x_t + b_in                       (d_inner)
//! B_t = s_B(u_t),  C_t = s_C(u_t)             (N)
//! Δ_t = softplus(s_Δ(u_t))                    scalar, shared by all channels
//! h_t[c] = exp(Δ_t A_c) h_{t−1}[c] + ψ(Δ_t, A_c) B_t u_t[c]
//! y_t[c] = C_t · h_t[c]
//! o_t = x_t + W_out (y_t ⊙ σ(W_gate x_t + b_gate)) + b_out
//! ```
//!
//! with `A = −exp(A_log)` per channel and state, and ZOH giving
//! `ψ = (exp(ΔA) − 1)/A`. Only the last `keep` outputs are produced; earlier
//! tokens contribute through the state alone.

use super::ssm::{zoh_scalar, zoh_scalar_grad};
use super::{sigmoid, softplus, ParamSet};
use crate::error::{LabError, Result};
use crate::ops::{matmul, matmul_nt, matmul_tn};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveBlock {
    pub w_in: Tensor,
    pub b_in: Tensor,
    pub w_gate: Tensor,
    pub b_gate: Tensor,
    pub s_b: Tensor,
    pub b_b: Tensor,
    pub s_c: Tensor,
    pub b_c: Tensor,
    pub s_dt: Tensor,
    pub b_dt: Tensor,
    pub a_log: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

/// Input-dependent `(B_t, C_t, Δ_t)` for a token sequence.
#[derive(Clone, Debug)]
pub struct SelectiveParams {
    pub b: Tensor,
    pub c: Tensor,
    pub delta: Vec<f64>,
}

/// Forward intermediates needed by [`SelectiveBlock::backward`].
#[derive(Clone, Debug)]
pub struct BlockCache {
    x: Tensor,
    u: Tensor,
    bmat: Tensor,
    dt_pre: Vec<f64>,
    delta: Vec<f64>,
    a: Vec<f64>,
    states: Vec<f64>,
    keep: usize,
    cmat: Tensor,
    gate: Tensor,
    y: Tensor,
    yg: Tensor,
}

fn add_bias_rows(m: &mut Tensor, bias: &Tensor) {
    let cols = bias.len();
    let b = bias.data();
    for row in m.data_mut().chunks_mut(cols) {
        for (v, bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
}

fn column_sums(m: &Tensor) -> Result<Tensor> {
    let (_, cols) = m.dims2()?;
    let mut out = vec![0.0; cols];
    for row in m.data().chunks(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Ok(Tensor::from_vec(out))
}

fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut y = matmul(x, w)?;
    add_bias_rows(&mut y, b);
    Ok(y)
}

fn tail_rows(m: &Tensor, start: usize) -> Result<Tensor> {
    let (rows, cols) = m.dims2()?;
    Tensor::new(vec![rows - start, cols], m.data()[start * cols..].to_vec())
}

/// `log(exp(y) − 1)`, the inverse of softplus.
fn inv_softplus(y: f64) -> f64 {
    y.exp_m1().ln()
}

impl SelectiveBlock {
    pub fn init(d: usize, expand: usize, state: usize, rng: &mut Rng) -> Result<Self> {
        if d == 0 || expand == 0 || state == 0 {
            return Err(LabError::Contract("selective block sizes must be positive".into()));
        }
        let di = d * expand;
        let sd = 1.0 / (d as f64).sqrt();
        let si = 1.0 / (di as f64).sqrt();
        let a_log = Tensor::from_fn(&[di, state], |k| ((k % state) as f64 + 1.0).ln());
        Ok(Self {
            w_in: Tensor::randn(&[d, di], sd, rng),
            b_in: Tensor::zeros(&[di]),
            w_gate: Tensor::randn(&[d, di], sd, rng),
            b_gate: Tensor::zeros(&[di]),
            s_b: Tensor::randn(&[di, state], si, rng),
            b_b: Tensor::zeros(&[state]),
            s_c: Tensor::randn(&[di, state], si, rng),
            b_c: Tensor::zeros(&[state]),
            s_dt: Tensor::randn(&[di, 1], 0.1 * si, rng),
            b_dt: Tensor::full(&[1], inv_softplus(0.01)),
            a_log,
            w_out: Tensor::randn(&[di, d], si, rng),
            b_out: Tensor::zeros(&[d]),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    pub fn d_model(&self) -> usize {
        self.w_in.shape()[0]
    }

    pub fn d_inner(&self) -> usize {
        self.w_in.shape()[1]
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// `A = −exp(A_log)`, row-major `d_inner × N`.
    pub fn a_matrix(&self) -> Vec<f64> {
        self.a_log.data().iter().map(|v| -v.exp()).collect()
    }

    /// Selection projections evaluated on in-projected tokens `u[L×d_inner]`.
    pub fn selective_params(&self, u: &Tensor) -> Result<SelectiveParams> {
        if !u.is_finite() {
            return Err(LabError::Evaluation("selective_params: non-finite token".into()));
        }
        let b = affine(u, &self.s_b, &self.b_b)?;
        let c = affine(u, &self.s_c, &self.b_c)?;
        let dt = affine(u, &self.s_dt, &self.b_dt)?;
        Ok(SelectiveParams {
            b,
            c,
            delta: dt.data().iter().map(|&v| softplus(v)).collect(),
        })
    }

    /// Runs the block over `x[L×d]` and returns the last `keep` outputs.
    pub fn forward(&self, x: &Tensor, keep: usize) -> Result<(Tensor, BlockCache)> {
        let (len, d) = x.dims2()?;
        if d != self.d_model() {
            return Err(LabError::dim("SelectiveBlock::forward", x.shape(), self.w_in.shape()));
        }
        if keep == 0 || keep > len {
            return Err(LabError::Contract(format!("cannot keep {keep} of {len} tokens")));
        }
        let di = self.d_inner();
        let n = self.state_dim();
        let start = len - keep;

        let u = affine(x, &self.w_in, &self.b_in)?;
        let bmat = affine(&u, &self.s_b, &self.b_b)?;
        let dt_pre = affine(&u, &self.s_dt, &self.b_dt)?.into_data();
        let delta: Vec<f64> = dt_pre.iter().map(|&v| softplus(v)).collect();
        let a = self.a_matrix();

        let mut states = vec![0.0; len * di * n];
        let mut h = vec![0.0; di * n];
        let ud = u.data();
        let bd = bmat.data();
        for t in 0..len {
            let dt = delta[t];
            let bt = &bd[t * n..(t + 1) * n];
            for c in 0..di {
                let uc = ud[t * di + c];
                let hc = &mut h[c * n..(c + 1) * n];
                let ac = &a[c * n..(c + 1) * n];
                for k in 0..n {
                    let (ab, psi) = zoh_scalar(ac[k], dt);
                    hc[k] = ab * hc[k] + psi * bt[k] * uc;
                }
            }
            states[t * di * n..(t + 1) * di * n].copy_from_slice(&h);
        }

        let x_tail = tail_rows(x, start)?;
        let u_tail = tail_rows(&u, start)?;
        let cmat = affine(&u_tail, &self.s_c, &self.b_c)?;
        let gate = affine(&x_tail, &self.w_gate, &self.b_gate)?.map(sigmoid);
        let mut y = Tensor::zeros(&[keep, di]);
        {
            let cd = cmat.data();
            let yd = y.data_mut();
            for r in 0..keep {
                let hs = &states[(start + r) * di * n..(start + r + 1) * di * n];
                let ct = &cd[r * n..(r + 1) * n];
                for c in 0..di {
                    yd[r * di + c] = hs[c * n..(c + 1) * n]
                        .iter()
                        .zip(ct)
                        .map(|(hv, cv)| hv * cv)
                        .sum();
                }
            }
        }
        let yg = y.mul(&gate)?;
        let mut out = affine(&yg, &self.w_out, &self.b_out)?;
        out.add_assign(&x_tail)?;

        let cache = BlockCache {
            x: x.clone(),
            u,
            bmat,
            dt_pre,
            delta,
            a,
            states,
            keep,
            cmat,
            gate,
            y,
            yg,
        };
        Ok((out, cache))
    }

    /// Reverse pass; returns parameter gradients and `∂/∂x[L×d]`.
    pub fn backward(&self, cache: &BlockCache, d_out: &Tensor) -> Result<(SelectiveBlock, Tensor)> {
        let (len, d) = cache.x.dims2()?;
        let keep = cache.keep;
        if d_out.shape() != [keep, d] {
            return Err(LabError::dim("SelectiveBlock::backward", d_out.shape(), &[keep, d]));
        }
        let di = self.d_inner();
        let n = self.state_dim();
        let start = len - keep;
        let mut g = self.zeros_like();

        g.b_out = column_sums(d_out)?;
        g.w_out = matmul_tn(&cache.yg, d_out)?;
        let d_yg = matmul_nt(d_out, &self.w_out)?;
        let dy = d_yg.mul(&cache.gate)?;
        let dz = Tensor::from_fn(&[keep, di], |k| {
            let s = cache.gate.data()[k];
            d_yg.data()[k] * cache.y.data()[k] * s * (1.0 - s)
        });
        let x_tail = tail_rows(&cache.x, start)?;
        g.w_gate = matmul_tn(&x_tail, &dz)?;
        g.b_gate = column_sums(&dz)?;

        let mut dx = Tensor::zeros(&[len, d]);
        {
            let dx_tail = matmul_nt(&dz, &self.w_gate)?;
            let dxd = dx.data_mut();
            for (k, (a, b)) in d_out.data().iter().zip(dx_tail.data()).enumerate() {
                dxd[start * d + k] = a + b;
            }
        }

        // dC and the readout's contribution to the state cotangent.
        let mut dcmat = Tensor::zeros(&[keep, n]);
        {
            let dcd = dcmat.data_mut();
            for r in 0..keep {
                let hs = &cache.states[(start + r) * di * n..(start + r + 1) * di * n];
                for c in 0..di {
                    let dyc = dy.data()[r * di + c];
                    for k in 0..n {
                        dcd[r * n + k] += dyc * hs[c * n + k];
                    }
                }
            }
        }
        let u_tail = tail_rows(&cache.u, start)?;
        g.s_c = matmul_tn(&u_tail, &dcmat)?;
        g.b_c = column_sums(&dcmat)?;
        let mut du = Tensor::zeros(&[len, di]);
        {
            let du_c = matmul_nt(&dcmat, &self.s_c)?;
            let dud = du.data_mut();
            for (k, v) in du_c.data().iter().enumerate() {
                dud[start * di + k] += v;
            }
        }

        let mut db = Tensor::zeros(&[len, n]);
        let mut d_delta = vec![0.0; len];
        let mut da = vec![0.0; di * n];
        let mut dh = vec![0.0; di * n];
        let ud = cache.u.data();
        let bd = cache.bmat.data();
        let cd = cache.cmat.data();
        let zero_state = vec![0.0; di * n];
        {
            let dud = du.data_mut();
            let dbd = db.data_mut();
            for t in (0..len).rev() {
                if t >= start {
                    let r = t - start;
                    for c in 0..di {
                        let dyc = dy.data()[r * di + c];
                        for k in 0..n {
                            dh[c * n + k] += dyc * cd[r * n + k];
                        }
                    }
                }
                let h_prev = if t == 0 {
                    &zero_state[..]
                } else {
                    &cache.states[(t - 1) * di * n..t * di * n]
                };
                let dt = cache.delta[t];
                let mut d_dt = 0.0;
                for c in 0..di {
                    let uc = ud[t * di + c];
                    for k in 0..n {
                        let idx = c * n + k;
                        let gh = dh[idx];
                        if gh == 0.0 {
                            continue;
                        }
                        let ak = cache.a[idx];
                        let bk = bd[t * n + k];
                        let (ab, psi) = zoh_scalar(ak, dt);
                        let (dab_dd, dab_da, dpsi_dd, dpsi_da) = zoh_scalar_grad(ak, dt, ab);
                        let d_ab = gh * h_prev[idx];
                        let d_psi = gh * bk * uc;
                        dbd[t * n + k] += gh * psi * uc;
                        dud[t * di + c] += gh * psi * bk;
                        d_dt += d_ab * dab_dd + d_psi * dpsi_dd;
                        da[idx] += d_ab * dab_da + d_psi * dpsi_da;
                        dh[idx] = gh * ab;
                    }
                }
                d_delta[t] = d_dt;
            }
        }

        let d_dtpre: Vec<f64> = d_delta
            .iter()
            .zip(&cache.dt_pre)
            .map(|(g, &p)| g * sigmoid(p))
            .collect();
        let d_dtpre = Tensor::new(vec![len, 1], d_dtpre)?;
        g.s_dt = matmul_tn(&cache.u, &d_dtpre)?;
        g.b_dt = column_sums(&d_dtpre)?;
        du.add_assign(&matmul_nt(&d_dtpre, &self.s_dt)?)?;

        g.s_b = matmul_tn(&cache.u, &db)?;
        g.b_b = column_sums(&db)?;
        du.add_assign(&matmul_nt(&db, &self.s_b)?)?;

        g.a_log = Tensor::new(
            vec![di, n],
            da.iter().zip(&cache.a).map(|(g, a)| g * a).collect(),
        )?;

        g.w_in = matmul_tn(&cache.x, &du)?;
        g.b_in = column_sums(&du)?;
        dx.add_assign(&matmul_nt(&du, &self.w_in)?)?;

        Ok((g, dx))
    }
}

impl ParamSet for SelectiveBlock {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_in".into(), &self.w_in),
            ("b_in".into(), &self.b_in),
            ("w_gate".into(), &self.w_gate),
            ("b_gate".into(), &self.b_gate),
            ("s_b".into(), &self.s_b),
            ("b_b".into(), &self.b_b),
            ("s_c".into(), &self.s_c),
            ("b_c".into(), &self.b_c),
            ("s_dt".into(), &self.s_dt),
            ("b_dt".into(), &self.b_dt),
            ("a_log".into(), &self.a_log),
            ("w_out".into(), &self.w_out),
            ("b_out".into(), &self.b_out),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_in,
            &mut self.b_in,
            &mut self.w_gate,
            &mut self.b_gate,
            &mut self.s_b,
            &mut self.b_b,
            &mut self.s_c,
            &mut self.b_c,
            &mut self.s_dt,
            &mut self.b_dt,
            &mut self.a_log,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_biases(b: &mut SelectiveBlock) {
        for t in [
            &mut b.b_in,
            &mut b.b_gate,
            &mut b.b_b,
            &mut b.b_c,
            &mut b.b_dt,
            &mut b.b_out,
        ] {
            t.fill(0.0);
        }
    }

    #[test]
    fn params_at_origin() {
        let mut blk = SelectiveBlock::init(4, 2, 3, &mut Rng::new(0)).unwrap();
        zero_biases(&mut blk);
        let sp = blk.selective_params(&Tensor::zeros(&[2, 8])).unwrap();
        assert_eq!(sp.b.max_abs(), 0.0);
        assert_eq!(sp.c.max_abs(), 0.0);
        assert!(sp.delta.iter().all(|&d| (d - 2f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn params_scale_linearly_without_bias() {
        let mut rng = Rng::new(1);
        let mut blk = SelectiveBlock::init(3, 2, 4, &mut rng).unwrap();
        zero_biases(&mut blk);
        let u = Tensor::randn(&[1, 6], 1.0, &mut rng);
        let p1 = blk.selective_params(&u).unwrap();
        let p3 = blk.selective_params(&u.scale(3.0)).unwrap();
        assert!(p3.b.max_abs_diff(&p1.b.scale(3.0)).unwrap() < 1e-12);
        assert!(p3.c.max_abs_diff(&p1.c.scale(3.0)).unwrap() < 1e-12);
    }

    #[test]
    fn params_match_row_dot_products() {
        let mut rng = Rng::new(2);
        let blk = SelectiveBlock::init(3, 2, 4, &mut rng).unwrap();
        let u = Tensor::randn(&[1, 6], 1.0, &mut rng);
        let sp = blk.selective_params(&u).unwrap();
        for k in 0..4 {
            let want: f64 = (0..6).map(|c| u.data()[c] * blk.s_b.get2(c, k)).sum::<f64>()
                + blk.b_b.data()[k];
            assert!((sp.b.data()[k] - want).abs() < 1e-14);
        }
        let pre: f64 = (0..6).map(|c| u.data()[c] * blk.s_dt.data()[c]).sum::<f64>()
            + blk.b_dt.data()[0];
        assert!((sp.delta[0] - (1.0 + pre.exp()).ln()).abs() < 1e-14);
        assert!(sp.delta[0] > 0.0);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut blk = SelectiveBlock::init(4, 2, 3, &mut Rng::new(3)).unwrap();
        zero_biases(&mut blk);
        let (out, _) = blk.forward(&Tensor::zeros(&[7, 4]), 3).unwrap();
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn causal_in_kept_outputs() {
        let mut rng = Rng::new(4);
        let blk = SelectiveBlock::init(3, 2, 4, &mut rng).unwrap();
        let x = Tensor::randn(&[6, 3], 1.0, &mut rng);
        let (full, _) = blk.forward(&x, 6).unwrap();
        let mut x2 = x.clone();
        for v in &mut x2.data_mut()[4 * 3..] {
            *v = 0.0;
        }
        let (cut, _) = blk.forward(&x2, 6).unwrap();
        assert_eq!(&full.data()[..4 * 3], &cut.data()[..4 * 3]);
    }
}
