//! Fast-net: a shared 2→H→H→1 linear stack over `(g, ŵ)` pairs.
//!
//! There are no activations, so the stack collapses to
//! `out = a_g·g + a_w·ŵ + c` with `(a_g, a_w) = M1·M2·M3`. Forward and
//! backward run on the collapsed form; parameter gradients are recovered
//! from three cotangent moments `Σc·g`, `Σc·ŵ`, `Σc`.

use super::ParamSet;
use crate::error::{LabError, Result};
use crate::init::orthogonal_init;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct FastNet {
    pub m1: Tensor,
    pub b1: Tensor,
    pub m2: Tensor,
    pub b2: Tensor,
    pub m3: Tensor,
    pub b3: Tensor,
}

/// Gradients from [`FastNet::backward`].
#[derive(Clone, Debug)]
pub struct FastGrads {
    pub params: FastNet,
    pub g: Tensor,
    pub w_hat: Tensor,
}

impl FastNet {
    /// Semi-orthogonal weights, zero biases. The sign of `M3` is chosen so
    /// that the gradient gain `a_g` starts positive, i.e. the initial map
    /// points along the incoming gradient rather than against it.
    pub fn init(hidden: usize, rng: &mut Rng) -> Result<Self> {
        let mut net = Self {
            m1: orthogonal_init(2, hidden, rng)?,
            b1: Tensor::zeros(&[hidden]),
            m2: orthogonal_init(hidden, hidden, rng)?,
            b2: Tensor::zeros(&[hidden]),
            m3: orthogonal_init(hidden, 1, rng)?,
            b3: Tensor::zeros(&[1]),
        };
        if net.collapsed().0 < 0.0 {
            net.m3 = net.m3.scale(-1.0);
        }
        Ok(net)
    }

    pub fn zeros(hidden: usize) -> Self {
        Self {
            m1: Tensor::zeros(&[2, hidden]),
            b1: Tensor::zeros(&[hidden]),
            m2: Tensor::zeros(&[hidden, hidden]),
            b2: Tensor::zeros(&[hidden]),
            m3: Tensor::zeros(&[hidden, 1]),
            b3: Tensor::zeros(&[1]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.hidden())
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    /// `u = M2·M3` (length H).
    fn m2m3(&self) -> Vec<f64> {
        let h = self.hidden();
        let m2 = self.m2.data();
        let m3 = self.m3.data();
        (0..h)
            .map(|p| (0..h).map(|q| m2[p * h + q] * m3[q]).sum())
            .collect()
    }

    /// `(a_g, a_w, c)` of the collapsed affine map.
    pub fn collapsed(&self) -> (f64, f64, f64) {
        let h = self.hidden();
        let u = self.m2m3();
        let m1 = self.m1.data();
        let a_g: f64 = (0..h).map(|p| m1[p] * u[p]).sum();
        let a_w: f64 = (0..h).map(|p| m1[h + p] * u[p]).sum();
        let c1: f64 = self.b1.data().iter().zip(&u).map(|(b, u)| b * u).sum();
        let c2: f64 = self.b2.data().iter().zip(self.m3.data()).map(|(b, m)| b * m).sum();
        (a_g, a_w, c1 + c2 + self.b3.data()[0])
    }

    pub fn forward(&self, g: &Tensor, w_hat: &Tensor) -> Result<Tensor> {
        g.expect_same_shape("fast_forward", w_hat)?;
        let (a_g, a_w, c) = self.collapsed();
        g.zip_map(w_hat, |gv, wv| a_g * gv + a_w * wv + c)
    }

    pub fn backward(&self, g: &Tensor, w_hat: &Tensor, cotangent: &Tensor) -> Result<FastGrads> {
        g.expect_same_shape("fast_backward", w_hat)?;
        if !cotangent.same_shape(g) {
            return Err(LabError::dim("fast_backward", cotangent.shape(), g.shape()));
        }
        let h = self.hidden();
        let (a_g, a_w, _) = self.collapsed();
        let (mut s_g, mut s_w, mut s_c) = (0.0, 0.0, 0.0);
        for ((c, gv), wv) in cotangent.data().iter().zip(g.data()).zip(w_hat.data()) {
            s_g += c * gv;
            s_w += c * wv;
            s_c += c;
        }
        let u = self.m2m3();
        let m1 = self.m1.data();
        let m2 = self.m2.data();
        let m3 = self.m3.data();
        // s1 = Σ_j c_j·h1_j ; s2 = Σ_j c_j·h2_j
        let s1: Vec<f64> = (0..h)
            .map(|p| s_g * m1[p] + s_w * m1[h + p] + s_c * self.b1.data()[p])
            .collect();
        let s2: Vec<f64> = (0..h)
            .map(|q| (0..h).map(|p| s1[p] * m2[p * h + q]).sum::<f64>() + s_c * self.b2.data()[q])
            .collect();

        let mut gm1 = vec![0.0; 2 * h];
        for p in 0..h {
            gm1[p] = s_g * u[p];
            gm1[h + p] = s_w * u[p];
        }
        let mut gm2 = vec![0.0; h * h];
        for p in 0..h {
            for q in 0..h {
                gm2[p * h + q] = s1[p] * m3[q];
            }
        }
        let params = FastNet {
            m1: Tensor::new(vec![2, h], gm1)?,
            b1: Tensor::new(vec![h], u.iter().map(|v| s_c * v).collect())?,
            m2: Tensor::new(vec![h, h], gm2)?,
            b2: Tensor::new(vec![h], m3.iter().map(|v| s_c * v).collect())?,
            m3: Tensor::new(vec![h, 1], s2)?,
            b3: Tensor::new(vec![1], vec![s_c])?,
        };
        Ok(FastGrads {
            params,
            g: cotangent.map(|c| c * a_g),
            w_hat: cotangent.map(|c| c * a_w),
        })
    }
}

impl ParamSet for FastNet {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("m1".into(), &self.m1),
            ("b1".into(), &self.b1),
            ("m2".into(), &self.m2),
            ("b2".into(), &self.b2),
            ("m3".into(), &self.m3),
            ("b3".into(), &self.b3),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.m1,
            &mut self.b1,
            &mut self.m2,
            &mut self.b2,
            &mut self.m3,
            &mut self.b3,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_maps_to_zero() {
        let net = FastNet::init(8, &mut Rng::new(0)).unwrap();
        let z = Tensor::zeros(&[3, 2]);
        assert_eq!(net.forward(&z, &z).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn homogeneous_in_gradient() {
        let net = FastNet::init(8, &mut Rng::new(1)).unwrap();
        let w = Tensor::zeros(&[1]);
        let y1 = net.forward(&Tensor::from_vec(vec![1.0]), &w).unwrap().data()[0];
        let y2 = net.forward(&Tensor::from_vec(vec![2.0]), &w).unwrap().data()[0];
        assert!((y2 - 2.0 * y1).abs() < 1e-15);
    }

    #[test]
    fn zero_cotangent() {
        let mut rng = Rng::new(2);
        let net = FastNet::init(6, &mut rng).unwrap();
        let g = Tensor::randn(&[4], 1.0, &mut rng);
        let w = Tensor::uniform(&[4], 0.0, 1.0, &mut rng);
        let grads = net.backward(&g, &w, &Tensor::zeros(&[4])).unwrap();
        assert_eq!(grads.g.max_abs(), 0.0);
        assert!(grads.params.tensors().iter().all(|t| t.max_abs() == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let mut rng = Rng::new(3);
        let net = FastNet::init(5, &mut rng).unwrap();
        let (a_g, _, _) = net.collapsed();
        let g = Tensor::from_vec(vec![0.7]);
        let w = Tensor::from_vec(vec![0.0]);
        let grads = net.backward(&g, &w, &Tensor::from_vec(vec![1.5])).unwrap();
        assert!((grads.g.data()[0] - 1.5 * a_g).abs() < 1e-15);
    }

    #[test]
    fn mismatched_shapes() {
        let net = FastNet::init(4, &mut Rng::new(0)).unwrap();
        assert!(net.forward(&Tensor::zeros(&[2]), &Tensor::zeros(&[3])).is_err());
    }
}
