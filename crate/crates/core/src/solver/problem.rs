//! Problem definition: data tensors, their models and the couplings between
//! them.

use log::warn;

use crate::coupling::CouplingSpec;
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::prox::Regularizer;
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;

/// One data tensor with its loss, weight, rank and per-mode regularizers.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlock<S: Scalar> {
    pub data: DenseTensor<S>,
    pub weight: S,
    pub loss: LossSpec,
    pub rank: usize,
    /// One regularizer per mode.
    pub regularizers: Vec<Regularizer>,
}

impl<S: Scalar> TensorBlock<S> {
    /// Unit weight, Frobenius loss and no regularization.
    pub fn new(data: DenseTensor<S>, rank: usize) -> Self {
        let order = data.order();
        Self {
            data,
            weight: S::one(),
            loss: LossSpec::Frobenius,
            rank,
            regularizers: vec![Regularizer::None; order],
        }
    }

    pub fn with_weight(mut self, weight: S) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_loss(mut self, loss: LossSpec) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_regularizer(mut self, mode: usize, reg: Regularizer) -> Self {
        self.regularizers[mode] = reg;
        self
    }

    /// The same regularizer in every mode.
    pub fn with_all_regularizers(mut self, reg: Regularizer) -> Self {
        self.regularizers.iter_mut().for_each(|r| *r = reg.clone());
        self
    }

    pub fn order(&self) -> usize {
        self.data.order()
    }

    /// Whether the factor in `mode` is confined to nonnegative values, by
    /// its regularizer or by the loss.
    pub fn is_nonnegative(&self, mode: usize) -> bool {
        self.loss.requires_nonnegative_model()
            || matches!(
                self.regularizers[mode],
                Regularizer::NonNegative | Regularizer::Simplex
            )
            || matches!(self.regularizers[mode], Regularizer::Box { lower, .. } if lower >= 0.0)
    }
}

/// Scales every tensor to unit Frobenius norm and sets all weights to `1/N`.
pub fn normalize_blocks<S: Scalar>(blocks: &mut [TensorBlock<S>]) -> Result<()> {
    let w = S::one() / S::lit(blocks.len() as f64);
    for (i, b) in blocks.iter_mut().enumerate() {
        let norm = b.data.frobenius_norm();
        if !(norm > S::zero()) {
            return Err(Error::InvalidProblem(format!("tensor {i} has zero norm")));
        }
        b.data.scale(S::one() / norm);
        b.weight = w;
    }
    Ok(())
}

/// Validated collection of tensor blocks and couplings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec<S: Scalar> {
    tensors: Vec<TensorBlock<S>>,
    couplings: Vec<CouplingSpec<S>>,
}

impl<S: Scalar> ProblemSpec<S> {
    pub fn new(tensors: Vec<TensorBlock<S>>, couplings: Vec<CouplingSpec<S>>) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidProblem(msg));
        if tensors.is_empty() {
            return invalid("no tensors".into());
        }
        for (i, b) in tensors.iter().enumerate() {
            if !(b.weight > S::zero() && b.weight.is_finite_value()) {
                return invalid(format!("tensor {i}: weight must be positive"));
            }
            if b.rank == 0 {
                return invalid(format!("tensor {i}: rank must be at least 1"));
            }
            if b.regularizers.len() != b.order() {
                return invalid(format!(
                    "tensor {i}: {} regularizers for {} modes",
                    b.regularizers.len(),
                    b.order()
                ));
            }
            for (d, r) in b.regularizers.iter().enumerate() {
                r.validate(Some(b.data.shape()[d]))
                    .map_err(|e| Error::InvalidProblem(format!("tensor {i}, mode {d}: {e}")))?;
            }
            b.loss
                .validate()
                .map_err(|e| Error::InvalidProblem(format!("tensor {i}: {e}")))?;
            // The data must lie in the loss domain; checking it against
            // itself as the model covers that.
            b.loss
                .accumulate(b.data.values(), b.data.values(), None)
                .map_err(|e| Error::InvalidProblem(format!("tensor {i}: {e}")))?;
            if b.loss.requires_nonnegative_model() {
                for (d, r) in b.regularizers.iter().enumerate() {
                    if !matches!(r, Regularizer::None | Regularizer::NonNegative) {
                        warn!("tensor {i}, mode {d}: {r:?} combined with a bound-constrained loss");
                    }
                }
            }
        }
        for (c, coupling) in couplings.iter().enumerate() {
            let d = coupling.mode();
            if couplings[..c].iter().any(|o| o.mode() == d) {
                return invalid(format!("more than one coupling in mode {d}"));
            }
            for p in coupling.participants() {
                if p.tensor >= tensors.len() {
                    return invalid(format!(
                        "coupling in mode {d} names tensor {} of {}",
                        p.tensor,
                        tensors.len()
                    ));
                }
            }
            coupling.check_factor_shapes(|i| {
                let b = &tensors[i];
                (d < b.order()).then(|| (b.data.shape()[d], b.rank))
            })?;
        }
        Ok(Self { tensors, couplings })
    }

    pub fn tensors(&self) -> &[TensorBlock<S>] {
        &self.tensors
    }

    pub fn tensor(&self, i: usize) -> &TensorBlock<S> {
        &self.tensors[i]
    }

    pub fn couplings(&self) -> &[CouplingSpec<S>] {
        &self.couplings
    }

    /// Index and spec of the coupling acting in `mode`.
    pub fn coupling_in_mode(&self, mode: usize) -> Option<(usize, &CouplingSpec<S>)> {
        self.couplings.iter().enumerate().find(|(_, c)| c.mode() == mode)
    }

    /// Largest tensor order, i.e. the number of modes in one sweep.
    pub fn max_order(&self) -> usize {
        self.tensors.iter().map(TensorBlock::order).max().unwrap_or(0)
    }

    /// Total number of factor matrices.
    pub fn factor_count(&self) -> usize {
        self.tensors.iter().map(TensorBlock::order).sum()
    }

    pub fn into_parts(self) -> (Vec<TensorBlock<S>>, Vec<CouplingSpec<S>>) {
        (self.tensors, self.couplings)
    }
}
