//! Factor update for losses without a closed form.
//!
//! Minimizes over `X`
//!
//! ```text
//! w·L(T_(d), X Mᵀ) + ρ/2 ‖X − (Z − μz)‖² + ρ/2 ‖A(X) − (B(Δ) − μΔ)‖²
//! ```
//!
//! where `A` maps the factor into the coupling space and `B(Δ)` is the
//! consensus side of the constraint. The penalty targets are passed
//! precomputed.

use nalgebra::DMatrix;

use super::lbfgsb::{minimize_bounded, Bounds, LbfgsbOptions, LbfgsbReport};
use super::LossSpec;
use crate::coupling::Transform;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{co_khatri_rao, unfold, DenseTensor, KruskalFactors};

/// `ρ/2 ‖X − target‖²`, with `target = Z − μz`.
#[derive(Debug, Clone, Copy)]
pub struct SplitPenalty<'a, S: Scalar> {
    pub target: &'a DMatrix<S>,
}

/// `ρ/2 ‖A(X) − target‖²`, with `target = B(Δ) − μΔ`.
#[derive(Debug, Clone, Copy)]
pub struct CouplingPenalty<'a, S: Scalar> {
    pub transform: &'a Transform<S>,
    pub target: &'a DMatrix<S>,
}

#[derive(Debug, Clone)]
pub struct FactorSubproblem<'a, S: Scalar> {
    pub loss: LossSpec,
    /// Mode unfolding of the data, `n × m`.
    pub unfolded: &'a DMatrix<S>,
    /// Co-Khatri-Rao product of the other factors, `m × R`.
    pub cokr: &'a DMatrix<S>,
    /// `loss.data_constant(unfolded)`; the data is not checked again.
    pub data_constant: S,
    pub weight: S,
    pub rho: S,
    pub split: Option<SplitPenalty<'a, S>>,
    pub coupling: Option<CouplingPenalty<'a, S>>,
    pub bounds: Bounds<S>,
}

#[derive(Debug, Clone)]
pub struct SubproblemOutcome<S: Scalar> {
    pub x: DMatrix<S>,
    /// False when no step decreased the objective; `x` is then the
    /// (projected) warm start.
    pub improved: bool,
    pub report: LbfgsbReport<S>,
}

/// Model and loss-gradient buffers, `n × m`.
struct Scratch<S: Scalar> {
    model: DMatrix<S>,
    g: DMatrix<S>,
}

impl<S: Scalar> Scratch<S> {
    fn new(n: usize, m: usize) -> Self {
        Self { model: DMatrix::zeros(n, m), g: DMatrix::zeros(n, m) }
    }
}

impl<'a, S: Scalar> FactorSubproblem<'a, S> {
    fn check(&self, warm: &DMatrix<S>) -> Result<()> {
        self.loss.validate()?;
        let (n, r) = warm.shape();
        if self.unfolded.nrows() != n
            || self.cokr.nrows() != self.unfolded.ncols()
            || self.cokr.ncols() != r
        {
            return Err(Error::shape(format!(
                "subproblem operands: factor {:?}, data {:?}, co-factor {:?}",
                warm.shape(),
                self.unfolded.shape(),
                self.cokr.shape()
            )));
        }
        if let Some(s) = &self.split {
            if s.target.shape() != warm.shape() {
                return Err(Error::shape("split target does not match the factor"));
            }
        }
        if let Some(c) = &self.coupling {
            if c.transform.factor_side_shape(n, r)? != c.target.shape() {
                return Err(Error::shape("coupling target does not match the transform"));
            }
        }
        Ok(())
    }

    /// Objective value, writing its gradient into `grad`.
    pub fn evaluate(&self, x: &DMatrix<S>, grad: &mut DMatrix<S>) -> Result<S> {
        let mut scratch = Scratch::new(self.unfolded.nrows(), self.unfolded.ncols());
        self.evaluate_with(x, grad, &mut scratch)
    }

    fn evaluate_with(&self, x: &DMatrix<S>, grad: &mut DMatrix<S>, scratch: &mut Scratch<S>) -> Result<S> {
        let half = S::lit(0.5);
        let Scratch { model, g } = scratch;
        model.gemm(S::one(), x, &self.cokr.transpose(), S::zero());
        let loss = self
            .loss
            .accumulate_model_terms(self.unfolded.as_slice(), model.as_slice(), Some(g.as_mut_slice()))?
            + self.data_constant;
        grad.gemm(self.weight, g, self.cokr, S::zero());
        let mut value = self.weight * loss;
        if let Some(s) = &self.split {
            let r = x - s.target;
            value += half * self.rho * r.norm_squared();
            *grad += &r * self.rho;
        }
        if let Some(c) = &self.coupling {
            let r = c.transform.factor_side(x) - c.target;
            value += half * self.rho * r.norm_squared();
            *grad += c.transform.factor_adjoint(&r) * self.rho;
        }
        Ok(value)
    }

    pub fn solve(&self, warm: &DMatrix<S>, opts: &LbfgsbOptions) -> Result<SubproblemOutcome<S>> {
        self.check(warm)?;
        let (n, r) = warm.shape();
        let mut x = warm.clone();
        let mut xm = DMatrix::<S>::zeros(n, r);
        let mut gm = DMatrix::<S>::zeros(n, r);
        let mut scratch = Scratch::new(n, self.unfolded.ncols());
        let report = minimize_bounded(x.as_mut_slice(), self.bounds, opts, |v, g| {
            xm.as_mut_slice().copy_from_slice(v);
            let f = self.evaluate_with(&xm, &mut gm, &mut scratch)?;
            g.copy_from_slice(gm.as_slice());
            Ok(f)
        })?;
        let improved = report.final_objective() < report.initial_objective();
        Ok(SubproblemOutcome { x, improved, report })
    }
}

/// Builds and solves the subproblem for `mode` of `k` against tensor `t`.
#[allow(clippy::too_many_arguments)]
pub fn solve_factor_subproblem<S: Scalar>(
    loss: &LossSpec,
    t: &DenseTensor<S>,
    k: &KruskalFactors<S>,
    mode: usize,
    weight: S,
    rho: S,
    split: Option<SplitPenalty<'_, S>>,
    coupling: Option<CouplingPenalty<'_, S>>,
    bounds: Bounds<S>,
    opts: &LbfgsbOptions,
) -> Result<SubproblemOutcome<S>> {
    if k.shape() != t.shape() {
        return Err(Error::shape(format!(
            "model {:?} vs data {:?}",
            k.shape(),
            t.shape()
        )));
    }
    let unfolded = unfold(t, mode)?;
    let cokr = co_khatri_rao(k, mode)?;
    let data_constant = loss.data_constant(unfolded.as_slice())?;
    FactorSubproblem {
        loss: *loss,
        unfolded: &unfolded,
        cokr: &cokr,
        data_constant,
        weight,
        rho,
        split,
        coupling,
        bounds,
    }
    .solve(k.factor(mode), opts)
}
