//! A sequential network with explicit per-layer forward and backward rules.
//!
//! The model owns the full-precision parameters. Forward and backward take
//! the *effective* tensors to compute with, one per parameter, so a caller
//! can run the same architecture on `W`, on `Q(A(W))` or on a look-ahead
//! `Q(A(W′))` without copying the model.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::ops;
use crate::quantize::{preprocess, quantize};
use crate::rng::Rng;
use crate::tensor::Tensor;

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        #[serde(default)]
        binarize: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
        #[serde(default)]
        binarize: bool,
    },
    Relu,
    Tanh,
    Flatten,
    /// Multiplies activations by a fixed constant (no parameters).
    Scale { factor: f64 },
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, binarize: bool) -> Self {
        LayerSpec::Dense { inputs, outputs, binarize }
    }

    fn binarized(&self) -> bool {
        matches!(
            self,
            LayerSpec::Dense { binarize: true, .. } | LayerSpec::Conv2d { binarize: true, .. }
        )
    }
}

/// Where a parameter lives and how it is treated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamMeta {
    pub name: String,
    pub layer: usize,
    /// Position among binarized weights (its history buffer and embedding
    /// row), or `None` for full-precision parameters.
    pub quant_index: Option<usize>,
}

/// Per-layer activations saved by [`Model::forward`].
#[derive(Clone, Debug)]
pub struct Tape {
    inputs: Vec<Tensor>,
    outputs: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Model {
    layers: Vec<LayerSpec>,
    /// Index of each layer's first parameter (weight, then bias).
    slots: Vec<Option<usize>>,
    pub params: Vec<Tensor>,
    meta: Vec<ParamMeta>,
    input_shape: Vec<usize>,
}

impl Model {
    /// `input_shape` is the per-sample shape (`[features]` or `[C, H, W]`).
    pub fn new(layers: Vec<LayerSpec>, input_shape: &[usize], rng: &mut Rng) -> Result<Self> {
        if layers.is_empty() {
            return Err(LabError::Contract("model needs at least one layer".into()));
        }
        let mut shape = input_shape.to_vec();
        let mut params = Vec::new();
        let mut meta = Vec::new();
        let mut slots = Vec::new();
        let mut n_quant = 0;
        for (li, layer) in layers.iter().enumerate() {
            let (w, b, next) = match *layer {
                LayerSpec::Dense { inputs, outputs, .. } => {
                    if shape != [inputs] || outputs == 0 {
                        return Err(LabError::dim("Model::new (dense)", &shape, &[inputs]));
                    }
                    let std = (2.0 / inputs as f64).sqrt();
                    let w = Tensor::randn(&[inputs, outputs], std, rng);
                    (Some(w), Some(Tensor::zeros(&[outputs])), vec![outputs])
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, pad, .. } => {
                    if shape.len() != 3 || shape[0] != in_channels || out_channels == 0 {
                        return Err(LabError::dim("Model::new (conv2d)", &shape, &[in_channels]));
                    }
                    if stride == 0 || kernel == 0 || kernel > shape[1] + 2 * pad || kernel > shape[2] + 2 * pad {
                        return Err(LabError::dim("Model::new (conv2d kernel)", &shape, &[kernel]));
                    }
                    let fan_in = in_channels * kernel * kernel;
                    let std = (2.0 / fan_in as f64).sqrt();
                    let w = Tensor::randn(&[out_channels, in_channels, kernel, kernel], std, rng);
                    let oh = (shape[1] + 2 * pad - kernel) / stride + 1;
                    let ow = (shape[2] + 2 * pad - kernel) / stride + 1;
                    (Some(w), Some(Tensor::zeros(&[out_channels])), vec![out_channels, oh, ow])
                }
                LayerSpec::Relu | LayerSpec::Tanh => (None, None, shape.clone()),
                LayerSpec::Scale { factor } => {
                    if !factor.is_finite() {
                        return Err(LabError::Domain(format!("scale factor {factor} is not finite")));
                    }
                    (None, None, shape.clone())
                }
                LayerSpec::Flatten => (None, None, vec![shape.iter().product()]),
            };
            match (w, b) {
                (Some(w), Some(b)) => {
                    slots.push(Some(params.len()));
                    let quant_index = layer.binarized().then(|| {
                        n_quant += 1;
                        n_quant - 1
                    });
                    meta.push(ParamMeta { name: format!("layer{li}.weight"), layer: li, quant_index });
                    meta.push(ParamMeta { name: format!("layer{li}.bias"), layer: li, quant_index: None });
                    params.push(w);
                    params.push(b);
                }
                _ => slots.push(None),
            }
            shape = next;
        }
        Ok(Self {
            layers,
            slots,
            params,
            meta,
            input_shape: input_shape.to_vec(),
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn meta(&self) -> &[ParamMeta] {
        &self.meta
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Parameter indices of binarized weights, ordered by `quant_index`.
    pub fn binarized_params(&self) -> Vec<usize> {
        self.meta
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.quant_index.map(|_| i))
            .collect()
    }

    pub fn num_binarized(&self) -> usize {
        self.binarized_params().len()
    }

    /// `Q(A(W))` for binarized weights, the parameter itself otherwise.
    pub fn effective_params(&self, bits: u32) -> Result<Vec<Tensor>> {
        self.params
            .iter()
            .zip(&self.meta)
            .map(|(p, m)| match m.quant_index {
                Some(_) => quantize(&preprocess(p)?.0, bits),
                None => Ok(p.clone()),
            })
            .collect()
    }

    fn check_params(&self, eff: &[Tensor]) -> Result<()> {
        if eff.len() != self.params.len() {
            return Err(LabError::dim("Model (parameter count)", &[eff.len()], &[self.params.len()]));
        }
        for (e, p) in eff.iter().zip(&self.params) {
            e.expect_same_shape("Model (parameter shape)", p)?;
        }
        Ok(())
    }

    /// Logits for `x[B×…]` computed with `eff`.
    pub fn forward(&self, x: &Tensor, eff: &[Tensor]) -> Result<(Tensor, Tape)> {
        self.check_params(eff)?;
        if x.shape().get(1..) != Some(self.input_shape.as_slice()) {
            return Err(LabError::dim("Model::forward", x.shape(), &self.input_shape));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (layer, slot) in self.layers.iter().zip(&self.slots) {
            let out = match (*layer, *slot) {
                (LayerSpec::Dense { .. }, Some(p)) => {
                    ops::bias_forward(&ops::dense_forward(&h, &eff[p])?, &eff[p + 1])?
                }
                (LayerSpec::Conv2d { stride, pad, .. }, Some(p)) => {
                    ops::bias_forward(&ops::conv2d_forward(&h, &eff[p], stride, pad)?, &eff[p + 1])?
                }
                (LayerSpec::Relu, _) => ops::relu_forward(&h),
                (LayerSpec::Tanh, _) => ops::tanh_forward(&h),
                (LayerSpec::Scale { factor }, _) => h.scale(factor),
                (LayerSpec::Flatten, _) => {
                    let b = h.shape()[0];
                    let rest = h.len() / b;
                    h.clone().reshape(&[b, rest])?
                }
                _ => unreachable!("parameter layers always own a slot"),
            };
            inputs.push(h);
            h = out.clone();
            outputs.push(out);
        }
        Ok((h, Tape { inputs, outputs }))
    }

    /// Gradients of `sum(g_out ⊙ logits)` with respect to each effective
    /// tensor.
    pub fn backward(&self, tape: &Tape, eff: &[Tensor], g_out: &Tensor) -> Result<Vec<Tensor>> {
        self.check_params(eff)?;
        let mut grads: Vec<Tensor> = eff.iter().map(|t| Tensor::zeros(t.shape())).collect();
        let mut g = g_out.clone();
        for li in (0..self.layers.len()).rev() {
            let x = &tape.inputs[li];
            g = match (self.layers[li], self.slots[li]) {
                (LayerSpec::Dense { .. }, Some(p)) => {
                    grads[p + 1] = ops::bias_backward(&g, &eff[p + 1])?;
                    let (gx, gw) = ops::dense_backward(x, &eff[p], &g)?;
                    grads[p] = gw;
                    gx
                }
                (LayerSpec::Conv2d { stride, pad, .. }, Some(p)) => {
                    grads[p + 1] = ops::bias_backward(&g, &eff[p + 1])?;
                    let (gx, gw) = ops::conv2d_backward(x, &eff[p], &g, stride, pad)?;
                    grads[p] = gw;
                    gx
                }
                (LayerSpec::Relu, _) => ops::relu_backward(x, &g)?,
                (LayerSpec::Tanh, _) => ops::tanh_backward(&tape.outputs[li], &g)?,
                (LayerSpec::Scale { factor }, _) => g.scale(factor),
                (LayerSpec::Flatten, _) => g.reshape(x.shape())?,
                _ => unreachable!("parameter layers always own a slot"),
            };
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;

    fn mlp(rng: &mut Rng) -> Model {
        Model::new(
            vec![
                LayerSpec::dense(2, 4, false),
                LayerSpec::Tanh,
                LayerSpec::dense(4, 3, true),
                LayerSpec::Relu,
                LayerSpec::dense(3, 2, false),
            ],
            &[2],
            rng,
        )
        .unwrap()
    }

    #[test]
    fn bookkeeping() {
        let m = mlp(&mut Rng::new(0));
        assert_eq!(m.params.len(), 6);
        assert_eq!(m.binarized_params(), vec![2]);
        assert_eq!(m.meta()[2].quant_index, Some(0));
        let eff = m.effective_params(1).unwrap();
        assert!(eff[2].data().iter().all(|&v| v == 1.0 || v == -1.0));
        assert_eq!(eff[0], m.params[0]);
    }

    #[test]
    fn rejects_mismatched_layers() {
        let r = Model::new(vec![LayerSpec::dense(3, 2, false)], &[2], &mut Rng::new(0));
        assert!(matches!(r, Err(LabError::Dimension { .. })));
    }

    #[test]
    fn backward_matches_differences() {
        let mut rng = Rng::new(1);
        let m = mlp(&mut rng);
        let x = Tensor::randn(&[3, 2], 1.0, &mut rng);
        let cot = Tensor::randn(&[3, 2], 1.0, &mut rng);
        let eff = m.params.clone();
        let (_, tape) = m.forward(&x, &eff).unwrap();
        let grads = m.backward(&tape, &eff, &cot).unwrap();
        for k in [0, 1, 4, 5] {
            let err = finite_diff_check(
                |p| {
                    let mut e = eff.clone();
                    e[k] = p.clone();
                    m.forward(&x, &e).unwrap().0.dot(&cot).unwrap()
                },
                &eff[k],
                &grads[k],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "param {k}: {err}");
        }
    }

    #[test]
    fn conv_stack_shapes() {
        let mut rng = Rng::new(2);
        let m = Model::new(
            vec![
                LayerSpec::Conv2d { in_channels: 1, out_channels: 2, kernel: 3, stride: 1, pad: 1, binarize: true },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::dense(2 * 4 * 4, 3, false),
            ],
            &[1, 4, 4],
            &mut rng,
        )
        .unwrap();
        let x = Tensor::randn(&[2, 1, 4, 4], 1.0, &mut rng);
        let eff = m.effective_params(1).unwrap();
        let (y, tape) = m.forward(&x, &eff).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        let g = m.backward(&tape, &eff, &Tensor::full(&[2, 3], 1.0)).unwrap();
        assert_eq!(g[0].shape(), &[2, 1, 3, 3]);
    }
}
