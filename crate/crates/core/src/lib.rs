//! AO-ADMM for regularized, linearly coupled CP factorizations of matrices
//! and tensors.
//!
//! The numerical core is generic over [`Scalar`]; the aliases at the crate
//! root fix it to `f64`, which is what the experiment harness uses.

// Negated comparisons reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod prox;
pub mod rng;
pub mod scalar;
pub mod solver;
pub mod synth;
pub mod tensor;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dense matrix in `f64`.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense tensor in `f64`.
pub type Tensor = tensor::DenseTensor<f64>;
/// CP model in `f64`.
pub type Kruskal = tensor::KruskalFactors<f64>;
