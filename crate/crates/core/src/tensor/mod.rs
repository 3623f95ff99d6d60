//! Dense multiway arrays and CP (Kruskal) models.
//!
//! Tensors are stored with the first index varying fastest. With that
//! layout the mode-1 unfolding is a plain reshape and the column index of
//! every other unfolding follows the usual convention where lower modes vary
//! faster, so `unfold(reconstruct(k), d) == C_d * M_dᵀ` holds exactly with
//! `M_d` built by [`co_khatri_rao`].
//!
//! Mode indices are zero-based throughout the library.

mod io;
mod ops;

pub use io::{read_header, read_tensor, read_tensor_path, write_binary, write_text, TensorFormat};
pub use ops::{
    co_khatri_rao, gram_hadamard, khatri_rao, mttkrp, mttkrp_naive, reconstruct, refold, unfold,
};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// N-way array, first index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<S> {
    shape: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> DenseTensor<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::shape(format!(
                "tensors need at least two modes, got {}",
                shape.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero-length mode in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![S::zero(); n])
    }

    /// Wraps a matrix as an order-2 tensor (column-major storage is already
    /// first-index-fastest).
    pub fn from_matrix(m: &DMatrix<S>) -> Self {
        Self {
            shape: vec![m.nrows(), m.ncols()],
            values: m.as_slice().to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    /// Linear index of a multi-index.
    pub fn linear_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut lin = 0;
        let mut stride = 1;
        for (&i, &n) in index.iter().zip(&self.shape) {
            debug_assert!(i < n);
            lin += i * stride;
            stride *= n;
        }
        lin
    }

    pub fn get(&self, index: &[usize]) -> S {
        self.values[self.linear_index(index)]
    }

    pub fn frobenius_norm(&self) -> S {
        self.values
            .iter()
            .fold(S::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    pub fn scale(&mut self, factor: S) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> DenseTensor<T> {
        DenseTensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// The tensor as a matrix when it has order 2.
    pub fn as_matrix(&self) -> Option<DMatrix<S>> {
        (self.order() == 2)
            .then(|| DMatrix::from_column_slice(self.shape[0], self.shape[1], &self.values))
    }

    pub(crate) fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            Err(Error::ModeOutOfRange {
                mode,
                order: self.order(),
            })
        } else {
            Ok(())
        }
    }
}

/// Ordered factor matrices of a CP model sharing one column count.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalFactors<S: Scalar> {
    factors: Vec<DMatrix<S>>,
}

impl<S: Scalar> KruskalFactors<S> {
    pub fn new(factors: Vec<DMatrix<S>>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(Error::shape("a CP model needs at least one factor"));
        };
        let rank = first.ncols();
        for (d, f) in factors.iter().enumerate() {
            if f.nrows() == 0 || f.ncols() == 0 {
                return Err(Error::shape(format!("factor {d} is empty")));
            }
            if f.ncols() != rank {
                return Err(Error::shape(format!(
                    "factor {d} has {} columns, expected {rank}",
                    f.ncols()
                )));
            }
        }
        Ok(Self { factors })
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factors(&self) -> &[DMatrix<S>] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &DMatrix<S> {
        &self.factors[mode]
    }

    /// Replaces one factor; the row and column counts must not change.
    pub fn set_factor(&mut self, mode: usize, value: DMatrix<S>) -> Result<()> {
        let old = self.factors.get(mode).ok_or(Error::ModeOutOfRange {
            mode,
            order: self.factors.len(),
        })?;
        if old.shape() != value.shape() {
            return Err(Error::shape(format!(
                "factor {mode} is {:?}, replacement is {:?}",
                old.shape(),
                value.shape()
            )));
        }
        self.factors[mode] = value;
        Ok(())
    }

    pub fn into_factors(self) -> Vec<DMatrix<S>> {
        self.factors
    }

    pub(crate) fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            Err(Error::ModeOutOfRange {
                mode,
                order: self.order(),
            })
        } else {
            Ok(())
        }
    }
}
