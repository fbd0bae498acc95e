//! Forward and backward rules for the layer kinds the lab uses.
//!
//! There is no tape: every layer kind exposes an explicit forward and an
//! explicit backward, so the trainer can swap the rule at the quantizer.
//! Summation order in every reduction is fixed (innermost index ascending),
//! which makes results bit-reproducible against the naive loop oracles.

use crate::error::{LabError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense,
    Conv2d,
    Bias,
    CrossEntropySoftmax,
}

impl LayerKind {
    pub const ALL: [LayerKind; 4] = [
        LayerKind::Dense,
        LayerKind::Conv2d,
        LayerKind::Bias,
        LayerKind::CrossEntropySoftmax,
    ];
}

/// `a[m×k] · b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(LabError::dim("matmul", a.shape(), b.shape()));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `aᵀ · b` without materialising the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(LabError::dim("matmul_tn", a.shape(), b.shape()));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let api = ad[p * m + i];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(LabError::dim("matmul_nt", a.shape(), b.shape()));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Dense layer without bias: `x[B×in] · w[in×out]`.
pub fn dense_forward(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    matmul(x, w)
}

/// Returns `(g_x, g_w)`.
pub fn dense_backward(x: &Tensor, w: &Tensor, g_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (b, _) = x.dims2()?;
    let (_, out) = w.dims2()?;
    if g_out.shape() != [b, out] {
        return Err(LabError::dim("dense_backward", g_out.shape(), &[b, out]));
    }
    Ok((matmul_nt(g_out, w)?, matmul_tn(x, g_out)?))
}

fn bias_geometry(x: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    if x.ndim() < 2 || bias.ndim() != 1 || x.shape()[1] != bias.len() {
        return Err(LabError::dim("bias", x.shape(), bias.shape()));
    }
    let batch = x.shape()[0];
    let channels = x.shape()[1];
    let inner: usize = x.shape()[2..].iter().product();
    Ok((batch, channels, inner))
}

/// Adds `bias[C]` along axis 1 of `x[B×C×…]`.
pub fn bias_forward(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, channels, inner) = bias_geometry(x, bias)?;
    let mut out = x.clone();
    let od = out.data_mut();
    let bd = bias.data();
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * inner;
            for v in &mut od[base..base + inner] {
                *v += bd[c];
            }
        }
    }
    Ok(out)
}

/// Gradient of the bias: `g_out` summed over every axis except 1.
pub fn bias_backward(g_out: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, channels, inner) = bias_geometry(g_out, bias)?;
    let gd = g_out.data();
    let mut gb = vec![0.0; channels];
    for b in 0..batch {
        for (c, acc) in gb.iter_mut().enumerate() {
            let base = (b * channels + c) * inner;
            for v in &gd[base..base + inner] {
                *acc += v;
            }
        }
    }
    Tensor::new(vec![channels], gb)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn conv_geometry(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<ConvGeom> {
    let (batch, c_in, h, wd) = x.dims4()?;
    let (c_out, c_in2, k, k2) = w.dims4()?;
    if c_in != c_in2 || k != k2 {
        return Err(LabError::dim("conv2d", x.shape(), w.shape()));
    }
    if stride == 0 {
        return Err(LabError::Domain("conv2d stride must be >= 1".into()));
    }
    if k > h + 2 * pad || k > wd + 2 * pad {
        return Err(LabError::dim("conv2d (kernel larger than padded input)", x.shape(), w.shape()));
    }
    Ok(ConvGeom {
        batch,
        c_in,
        h,
        w: wd,
        c_out,
        k,
        stride,
        pad,
        oh: (h + 2 * pad - k) / stride + 1,
        ow: (wd + 2 * pad - k) / stride + 1,
    })
}

impl ConvGeom {
    /// Input coordinate for output position `o` and kernel tap `t`, if inside.
    #[inline]
    fn src(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + t) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

/// Cross-correlation of `x[B×C_in×H×W]` with `w[C_out×C_in×K×K]`.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = conv_geometry(x, w, stride, pad)?;
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; g.batch * g.c_out * g.oh * g.ow];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0;
                    for ci in 0..g.c_in {
                        for ky in 0..g.k {
                            let Some(iy) = g.src(oy, ky, g.h) else { continue };
                            for kx in 0..g.k {
                                let Some(ix) = g.src(ox, kx, g.w) else { continue };
                                acc += xd[((b * g.c_in + ci) * g.h + iy) * g.w + ix]
                                    * wd[((co * g.c_in + ci) * g.k + ky) * g.k + kx];
                            }
                        }
                    }
                    out[((b * g.c_out + co) * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![g.batch, g.c_out, g.oh, g.ow], out)
}

/// Returns `(g_x, g_w)` for `sum(g_out ⊙ conv2d_forward(x, w))`.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    g_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor)> {
    let g = conv_geometry(x, w, stride, pad)?;
    let expected = [g.batch, g.c_out, g.oh, g.ow];
    if g_out.shape() != expected {
        return Err(LabError::dim("conv2d_backward", g_out.shape(), &expected));
    }
    let xd = x.data();
    let wd = w.data();
    let gd = g_out.data();
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wd.len()];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let go = gd[((b * g.c_out + co) * g.oh + oy) * g.ow + ox];
                    if go == 0.0 {
                        continue;
                    }
                    for ci in 0..g.c_in {
                        for ky in 0..g.k {
                            let Some(iy) = g.src(oy, ky, g.h) else { continue };
                            for kx in 0..g.k {
                                let Some(ix) = g.src(ox, kx, g.w) else { continue };
                                let xi = ((b * g.c_in + ci) * g.h + iy) * g.w + ix;
                                let wi = ((co * g.c_in + ci) * g.k + ky) * g.k + kx;
                                gx[xi] += go * wd[wi];
                                gw[wi] += go * xd[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(w.shape().to_vec(), gw)?,
    ))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, g_out: &Tensor) -> Result<Tensor> {
    x.zip_map(g_out, |v, g| if v > 0.0 { g } else { 0.0 })
}

pub fn tanh_forward(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Takes the forward *output* `y = tanh(x)`.
pub fn tanh_backward(y: &Tensor, g_out: &Tensor) -> Result<Tensor> {
    y.zip_map(g_out, |t, g| g * (1.0 - t * t))
}

/// Result of the fused softmax + mean cross-entropy.
#[derive(Clone, Debug)]
pub struct CrossEntropy {
    pub loss: f64,
    pub probs: Tensor,
    pub grad_logits: Tensor,
    pub correct: usize,
}

/// Mean softmax cross-entropy over the batch for `logits[B×K]`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<CrossEntropy> {
    let (batch, classes) = logits.dims2()?;
    if labels.len() != batch {
        return Err(LabError::dim("softmax_cross_entropy", logits.shape(), &[labels.len()]));
    }
    let mut probs = vec![0.0; batch * classes];
    let mut grad = vec![0.0; batch * classes];
    let mut loss = 0.0;
    let mut correct = 0;
    let inv_b = 1.0 / batch as f64;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(LabError::Index {
                index: label,
                len: classes,
            });
        }
        let row = logits.row(b);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = z.ln() + max;
        let mut best = 0;
        for j in 0..classes {
            let p = (row[j] - log_z).exp();
            probs[b * classes + j] = p;
            grad[b * classes + j] = (p - if j == label { 1.0 } else { 0.0 }) * inv_b;
            if row[j] > row[best] {
                best = j;
            }
        }
        loss += log_z - row[label];
        if best == label {
            correct += 1;
        }
    }
    Ok(CrossEntropy {
        loss: loss * inv_b,
        probs: Tensor::new(vec![batch, classes], probs)?,
        grad_logits: Tensor::new(vec![batch, classes], grad)?,
        correct,
    })
}
