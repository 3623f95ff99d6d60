//! Elementwise data-fitting losses `L(T, X) = Σ_j ℓ(t_j, x_j)` and their
//! gradients in the model argument.

mod lbfgsb;
mod subproblem;

pub use lbfgsb::{minimize_bounded, Bounds, LbfgsbOptions, LbfgsbReport, LbfgsbStatus};
pub use subproblem::{
    solve_factor_subproblem, CouplingPenalty, FactorSubproblem, SplitPenalty, SubproblemOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;

/// Model entries are floored here inside divergences whose terms need `x > 0`.
pub const MODEL_FLOOR: f64 = 1e-12;

/// Model entries this far below zero are reported as domain violations
/// instead of being floored.
pub const NEGATIVE_MODEL_TOL: f64 = 1e-9;

/// Loss family with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    /// `(t − x)²`
    #[default]
    Frobenius,
    /// Kullback-Leibler: `x − t log x + t log t − t`
    #[serde(alias = "kullback_leibler")]
    Kl,
    /// Itakura-Saito: `t/x + log x − log t − 1`
    #[serde(alias = "itakura_saito")]
    Is,
    /// β-divergence: `t^β/(β(β−1)) + x^β/β − t x^(β−1)/(β−1)`
    Beta { beta: f64 },
    /// α-divergence: `(t^α x^(1−α) − α t + (α−1) x) / (α(α−1))`
    Alpha { alpha: f64 },
    /// Huber: `(t−x)²` if `|t−x| ≤ d`, else `2d|t−x| − d²`
    Huber { delta: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Beta { beta } if beta == 0.0 || beta == 1.0 || !beta.is_finite() => {
                Err(Error::param(format!("beta must be finite and not 0 or 1, got {beta}")))
            }
            LossSpec::Alpha { alpha } if alpha == 0.0 || alpha == 1.0 || !alpha.is_finite() => {
                Err(Error::param(format!("alpha must be finite and not 0 or 1, got {alpha}")))
            }
            LossSpec::Huber { delta } if !(delta > 0.0 && delta.is_finite()) => {
                Err(Error::param(format!("huber delta must be positive, got {delta}")))
            }
            _ => Ok(()),
        }
    }

    /// Whether the loss is only defined for nonnegative model entries, in
    /// which case every factor of the tensor is bounded below by zero.
    pub fn requires_nonnegative_model(&self) -> bool {
        matches!(
            self,
            LossSpec::Kl | LossSpec::Is | LossSpec::Beta { .. } | LossSpec::Alpha { .. }
        )
    }

    pub fn is_frobenius(&self) -> bool {
        matches!(self, LossSpec::Frobenius)
    }

    /// Checks that a data entry lies in the loss's domain.
    fn check_data<S: Scalar>(&self, t: S, index: usize) -> Result<()> {
        let bad = |message: String| Err(Error::Domain { index, message });
        if !t.is_finite_value() {
            return bad(format!("data entry {} is not finite", t.to_f64_lossy()));
        }
        match *self {
            LossSpec::Kl | LossSpec::Beta { .. } | LossSpec::Alpha { .. } if t < S::zero() => {
                bad(format!("data entry {} is negative", t.to_f64_lossy()))
            }
            LossSpec::Is if t <= S::zero() => {
                bad(format!("Itakura-Saito needs positive data, got {}", t.to_f64_lossy()))
            }
            LossSpec::Beta { beta } if beta < 0.0 && t.is_zero() => {
                bad("beta < 0 needs positive data".to_string())
            }
            LossSpec::Alpha { alpha } if alpha < 0.0 && t.is_zero() => {
                bad("alpha < 0 needs positive data".to_string())
            }
            _ => Ok(()),
        }
    }

    /// Floors the model entry for divergences that need `x > 0`.
    fn model_entry<S: Scalar>(&self, x: S, index: usize) -> Result<S> {
        if !x.is_finite_value() {
            return Err(Error::Domain {
                index,
                message: format!("model entry {} is not finite", x.to_f64_lossy()),
            });
        }
        if !self.requires_nonnegative_model() {
            return Ok(x);
        }
        if x < -S::lit(NEGATIVE_MODEL_TOL) {
            return Err(Error::Domain {
                index,
                message: format!("model entry {} is negative", x.to_f64_lossy()),
            });
        }
        Ok(x.max(S::lit(MODEL_FLOOR)))
    }

    /// Part of `ℓ(t, x)` that depends on `x`, and `∂ℓ/∂x`, after domain
    /// handling.
    #[inline]
    fn pointwise<S: Scalar>(&self, t: S, x: S) -> (S, S) {
        let one = S::one();
        let two = S::lit(2.0);
        match *self {
            LossSpec::Frobenius => {
                let r = x - t;
                (r * r, two * r)
            }
            LossSpec::Kl => {
                if t.is_zero() {
                    (x, one)
                } else {
                    (x - t * x.ln(), one - t / x)
                }
            }
            LossSpec::Is => (t / x + x.ln(), one / x - t / (x * x)),
            LossSpec::Beta { beta } => {
                let b = S::lit(beta);
                let xb1 = x.powf(b - one);
                let value = x * xb1 / b - t * xb1 / (b - one);
                let grad = xb1 - t * x.powf(b - two);
                (value, grad)
            }
            LossSpec::Alpha { alpha } => {
                let a = S::lit(alpha);
                // t^α x^(−α), with 0^α = 0 for α > 0
                let ratio = if t.is_zero() { S::zero() } else { (t / x).powf(a) };
                let value = (ratio * x + (a - one) * x) / (a * (a - one));
                let grad = (one - ratio) / a;
                (value, grad)
            }
            LossSpec::Huber { delta } => {
                let d = S::lit(delta);
                let r = x - t;
                if r.abs() <= d {
                    (r * r, two * r)
                } else {
                    (two * d * r.abs() - d * d, two * d * r.signum())
                }
            }
        }
    }

    /// Part of `ℓ(t, x)` that depends on `t` alone.
    #[inline]
    fn pointwise_constant<S: Scalar>(&self, t: S) -> S {
        let one = S::one();
        match *self {
            LossSpec::Frobenius | LossSpec::Huber { .. } => S::zero(),
            LossSpec::Kl => {
                if t.is_zero() {
                    S::zero()
                } else {
                    t * t.ln() - t
                }
            }
            LossSpec::Is => -t.ln() - one,
            LossSpec::Beta { beta } => {
                let b = S::lit(beta);
                if t.is_zero() {
                    S::zero()
                } else {
                    t.powf(b) / (b * (b - one))
                }
            }
            LossSpec::Alpha { alpha } => -t / (S::lit(alpha) - one),
        }
    }

    /// Sum of the terms of `L(t, x)` that do not depend on `x`. Validates
    /// the data.
    pub fn data_constant<S: Scalar>(&self, t: &[S]) -> Result<S> {
        let mut total = S::zero();
        for (j, &tj) in t.iter().enumerate() {
            self.check_data(tj, j)?;
            total += self.pointwise_constant(tj);
        }
        Ok(total)
    }

    /// `L(t, x) − data_constant(t)`, optionally writing `∂ℓ/∂x` into `grad`.
    /// The data is assumed valid; model entries are checked.
    pub fn accumulate_model_terms<S: Scalar>(&self, t: &[S], x: &[S], mut grad: Option<&mut [S]>) -> Result<S> {
        if t.len() != x.len() || grad.as_ref().is_some_and(|g| g.len() != t.len()) {
            return Err(Error::shape("loss operands differ in length"));
        }
        let mut total = S::zero();
        if let LossSpec::Frobenius = self {
            let two = S::lit(2.0);
            for (j, (&tj, &xj)) in t.iter().zip(x).enumerate() {
                let r = xj - tj;
                total += r * r;
                if let Some(grad) = grad.as_deref_mut() {
                    grad[j] = two * r;
                }
            }
            if total.is_finite_value() {
                return Ok(total);
            }
            // Locate the offending entry.
            total = S::zero();
        }
        for (j, (&tj, &xj)) in t.iter().zip(x).enumerate() {
            let floored = self.model_entry(xj, j)?;
            // A zero count contributes `x` itself, which needs no floor.
            let xj = if tj.is_zero() && matches!(self, LossSpec::Kl) { xj.max(S::zero()) } else { floored };
            let (v, g) = self.pointwise(tj, xj);
            total += v;
            if let Some(grad) = grad.as_deref_mut() {
                grad[j] = g;
            }
        }
        Ok(total)
    }

    /// Sums the loss over paired slices, optionally writing `∂ℓ/∂x` into
    /// `grad`. Indices in errors refer to positions in the slices.
    pub fn accumulate<S: Scalar>(&self, t: &[S], x: &[S], grad: Option<&mut [S]>) -> Result<S> {
        if t.len() != x.len() {
            return Err(Error::shape("loss operands differ in length"));
        }
        let constant = self.data_constant(t)?;
        Ok(constant + self.accumulate_model_terms(t, x, grad)?)
    }
}

fn check_same_shape<S: Scalar>(t: &DenseTensor<S>, x: &DenseTensor<S>) -> Result<()> {
    if t.shape() != x.shape() {
        return Err(Error::shape(format!(
            "data {:?} vs model {:?}",
            t.shape(),
            x.shape()
        )));
    }
    Ok(())
}

/// `L(T, X)`.
pub fn loss_value<S: Scalar>(spec: &LossSpec, t: &DenseTensor<S>, x: &DenseTensor<S>) -> Result<S> {
    spec.validate()?;
    check_same_shape(t, x)?;
    spec.accumulate(t.values(), x.values(), None)
}

/// Entrywise `∂ℓ/∂x`, shaped like the data.
pub fn loss_gradient<S: Scalar>(
    spec: &LossSpec,
    t: &DenseTensor<S>,
    x: &DenseTensor<S>,
) -> Result<DenseTensor<S>> {
    spec.validate()?;
    check_same_shape(t, x)?;
    let mut grad = vec![S::zero(); t.len()];
    spec.accumulate(t.values(), x.values(), Some(&mut grad))?;
    DenseTensor::new(t.shape().to_vec(), grad)
}
