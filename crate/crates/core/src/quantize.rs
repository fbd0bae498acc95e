//! DoReFa weight binarization.
//!
//! `preprocess` squashes weights into `[0, 1]` with a tanh normalised by the
//! layer's largest magnitude; `quantize` rounds onto `2^k` uniform levels in
//! `[-1, 1]`. The normalising maximum is held constant when differentiating,
//! so `dA/dW` stays elementwise.

use crate::error::{LabError, Result};
use crate::tensor::Tensor;

/// Below this, `max|tanh(W)|` is treated as zero and the layer is degenerate.
pub const DEGENERATE_SCALE: f64 = 1e-12;

/// Tolerance on `W_hat` leaving `[0, 1]` before `quantize` refuses it.
pub const DOMAIN_SLACK: f64 = 1e-9;

/// `max|tanh(W)|`.
pub fn tanh_scale(w: &Tensor) -> f64 {
    w.data().iter().fold(0.0, |m, v| m.max(v.tanh().abs()))
}

/// Returns `(W_hat, dA/dW)`.
pub fn preprocess(w: &Tensor) -> Result<(Tensor, Tensor)> {
    if !w.is_finite() {
        return Err(LabError::Evaluation("preprocess: non-finite weight".into()));
    }
    preprocess_with_scale(w, tanh_scale(w))
}

/// `preprocess` with the normaliser supplied by the caller.
///
/// The training path always passes `tanh_scale(w)`; a frozen scale is what
/// the constant-max derivative is the exact derivative of.
pub fn preprocess_with_scale(w: &Tensor, scale: f64) -> Result<(Tensor, Tensor)> {
    if !w.is_finite() || !scale.is_finite() {
        return Err(LabError::Evaluation("preprocess: non-finite input".into()));
    }
    if scale < DEGENERATE_SCALE {
        return Ok((Tensor::full(w.shape(), 0.5), Tensor::zeros(w.shape())));
    }
    let inv = 1.0 / (2.0 * scale);
    let w_hat = w.map(|v| v.tanh() * inv + 0.5);
    let da = w.map(|v| {
        let t = v.tanh();
        (1.0 - t * t) * inv
    });
    Ok((w_hat, da))
}

/// `2·round((2^k−1)·W_hat)/(2^k−1) − 1`, rounding half away from zero.
pub fn quantize(w_hat: &Tensor, bits: u32) -> Result<Tensor> {
    if bits == 0 || bits > 30 {
        return Err(LabError::Domain(format!("bit-width must be in 1..=30, got {bits}")));
    }
    if let Some(bad) = w_hat
        .data()
        .iter()
        .find(|v| !(**v >= -DOMAIN_SLACK && **v <= 1.0 + DOMAIN_SLACK))
    {
        return Err(LabError::Domain(format!("quantize input {bad} outside [0, 1]")));
    }
    let levels = ((1u64 << bits) - 1) as f64;
    Ok(w_hat.map(|v| 2.0 * (levels * v).round() / levels - 1.0))
}

/// Straight-through rule across the quantizer: the gradient passes unchanged.
pub fn ste_backward(g_out: &Tensor) -> Tensor {
    g_out.clone()
}

/// One binarized layer's weights and everything derived from them.
#[derive(Clone, Debug)]
pub struct QuantLayerState {
    pub layer_index: usize,
    pub bits: u32,
    pub w: Tensor,
    pub w_hat: Tensor,
    pub w_b: Tensor,
    pub da_dw: Tensor,
    pub registered_grad: Tensor,
}

impl QuantLayerState {
    pub fn new(w: Tensor, layer_index: usize, bits: u32) -> Result<Self> {
        let (w_hat, da_dw) = preprocess(&w)?;
        let w_b = quantize(&w_hat, bits)?;
        let registered_grad = Tensor::zeros(w.shape());
        Ok(Self {
            layer_index,
            bits,
            w,
            w_hat,
            w_b,
            da_dw,
            registered_grad,
        })
    }

    /// Recomputes the cached tensors after `w` changed.
    pub fn refresh(&mut self) -> Result<()> {
        let (w_hat, da_dw) = preprocess(&self.w)?;
        self.w_b = quantize(&w_hat, self.bits)?;
        self.w_hat = w_hat;
        self.da_dw = da_dw;
        Ok(())
    }

    pub fn set_weights(&mut self, w: Tensor) -> Result<()> {
        self.w.expect_same_shape("QuantLayerState::set_weights", &w)?;
        self.w = w;
        self.refresh()
    }

    /// Plain DoReFa + STE gradient: `g ⊙ dA/dW`.
    pub fn ste_gradient(&self, g_wb: &Tensor) -> Result<Tensor> {
        ste_backward(g_wb).mul(&self.da_dw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;
    use crate::rng::Rng;

    #[test]
    fn symmetric_endpoints() {
        let w = Tensor::from_vec(vec![-1.0, 0.0, 1.0]);
        let (wh, _) = preprocess(&w).unwrap();
        assert_eq!(wh.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn degenerate_guard() {
        let w = Tensor::zeros(&[2, 3]);
        let (wh, da) = preprocess(&w).unwrap();
        assert!(wh.data().iter().all(|&v| v == 0.5));
        assert!(da.data().iter().all(|&v| v == 0.0));
        let wb = quantize(&wh, 1).unwrap();
        assert!(wb.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn derivative_matches_constant_max_surrogate() {
        let mut rng = Rng::new(11);
        let w = Tensor::randn(&[3, 3], 1.0, &mut rng);
        let scale = tanh_scale(&w);
        let (_, da) = preprocess(&w).unwrap();
        for idx in 0..9 {
            let mut e = Tensor::zeros(&[3, 3]);
            e.data_mut()[idx] = 1.0;
            let analytic = Tensor::from_vec(vec![da.data()[idx]]);
            let point = Tensor::from_vec(vec![w.data()[idx]]);
            let err = finite_diff_check(
                |p| {
                    let mut ww = w.clone();
                    ww.data_mut()[idx] = p.data()[0];
                    preprocess_with_scale(&ww, scale).unwrap().0.data()[idx]
                },
                &point,
                &analytic,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-6, "coordinate {idx}: {err}");
        }
    }

    #[test]
    fn one_bit_levels() {
        let wh = Tensor::from_vec(vec![0.2, 0.8, 1.0, 0.0, 0.5]);
        assert_eq!(quantize(&wh, 1).unwrap().data(), &[-1.0, 1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn two_bit_levels() {
        let wh = Tensor::from_vec(vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        let wb = quantize(&wh, 2).unwrap();
        let want = [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0];
        for (g, w) in wb.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_is_domain_error() {
        let wh = Tensor::from_vec(vec![1.1]);
        assert!(matches!(quantize(&wh, 1), Err(LabError::Domain(_))));
        let wh = Tensor::from_vec(vec![-1e-10, 1.0 + 1e-10]);
        assert!(quantize(&wh, 1).is_ok());
    }

    #[test]
    fn non_finite_rejected() {
        let w = Tensor::from_vec(vec![f64::NAN]);
        assert!(matches!(preprocess(&w), Err(LabError::Evaluation(_))));
    }

    #[test]
    fn ste_is_identity() {
        let g = Tensor::from_vec(vec![1.5, -2.0]);
        assert_eq!(ste_backward(&g), g);
        assert_eq!(ste_backward(&Tensor::zeros(&[3])), Tensor::zeros(&[3]));
    }

    #[test]
    fn composed_ste_matches_surrogate_path() {
        // ℓ(W) = Σ r ⊙ A(W) with the max frozen; its gradient is r ⊙ dA/dW,
        // i.e. STE (identity) across Q followed by dA/dW.
        let mut rng = Rng::new(5);
        let w = Tensor::randn(&[4, 3], 0.8, &mut rng);
        let r = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let scale = tanh_scale(&w);
        let state = QuantLayerState::new(w.clone(), 0, 1).unwrap();
        let analytic = state.ste_gradient(&r).unwrap();
        let err = finite_diff_check(
            |p| preprocess_with_scale(p, scale).unwrap().0.dot(&r).unwrap(),
            &w,
            &analytic,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn state_keeps_shapes() {
        let mut rng = Rng::new(9);
        let w = Tensor::randn(&[2, 3, 3, 3], 1.0, &mut rng);
        let s = QuantLayerState::new(w, 4, 1).unwrap();
        for t in [&s.w_hat, &s.w_b, &s.da_dw, &s.registered_grad] {
            assert_eq!(t.shape(), s.w.shape());
        }
    }
}
