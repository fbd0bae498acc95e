//! Fast/slow learned gradient estimation for binary neural networks.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod checkpoint;
pub mod checks;
pub mod cli;
pub mod config;
pub mod convergence;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod hgs;
pub mod hypernet;
pub mod init;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod quantize;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{LabError, Result};
pub use rng::Rng;
pub use tensor::Tensor;
