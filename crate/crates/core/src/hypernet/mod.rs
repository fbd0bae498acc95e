//! Gradient-generating hypernetworks.
//!
//! * [`fast`]: a shared linear stack applied to every `(gradient, Ŵ)` pair.
//! * [`ssm`]: diagonal state-space primitives (ZOH, recurrence, convolution).
//! * [`selective`]: the selective-scan block used as the slow-net.
//! * [`lstm`]: the LSTM alternative for the slow-net.
//! * [`bundle`]: the shared nets plus per-layer embeddings and projections.

pub mod bundle;
pub mod fast;
pub mod lstm;
pub mod selective;
pub mod ssm;

pub use bundle::{HyperNetBundle, HyperNetConfig, SlowCache, SlowKind, SlowNet};
pub use fast::FastNet;
pub use lstm::LstmCell;
pub use selective::{SelectiveBlock, SelectiveParams};

use crate::error::Result;
use crate::tensor::Tensor;

/// A fixed, ordered collection of named parameter tensors.
///
/// Gradient containers reuse the parameter type itself (see `zeros_like`),
/// so `tensors()` of a parameter set and of its gradient pair up by index.
pub trait ParamSet {
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self) -> Result<()>
    where
        Self: Sized,
    {
        let src = other.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            dst.add_assign(s)?;
        }
        Ok(())
    }

    fn checksum(&self) -> u64 {
        self.tensors()
            .iter()
            .fold(0u64, |h, t| h.rotate_left(7) ^ t.checksum())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}
