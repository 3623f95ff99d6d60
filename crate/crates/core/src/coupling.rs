//! Linear couplings between factor matrices of different tensors sharing a
//! mode, and the closed-form updates they admit under the Frobenius loss.
//!
//! Every coupling ties each participant's factor `C_i` to one consensus
//! matrix `Δ` through a constraint `A_i(C_i) = B_i(Δ)`:
//!
//! | case | constraint      | `A_i(C)` | `B_i(Δ)` |
//! |------|-----------------|----------|----------|
//! | 1    | `C = Δ`         | `C`      | `Δ`      |
//! | 2a   | `H̃ C = Δ`       | `H̃ C`    | `Δ`      |
//! | 2b   | `C = H̃Δ Δ`      | `C`      | `H̃Δ Δ`   |
//! | 3a   | `C Ĥ = Δ`       | `C Ĥ`    | `Δ`      |
//! | 3b   | `C = Δ ĤΔ`      | `C`      | `Δ ĤΔ`   |
//!
//! Duals `μΔ` live in the space of `A_i(C_i)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_right_psd, SpdFactor, SylvesterSolver};
use crate::scalar::Scalar;
use crate::tensor::{gram_hadamard, mttkrp, DenseTensor, KruskalFactors};

/// Denominator guard for relative residuals.
pub const RESIDUAL_GUARD: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CouplingCase {
    #[serde(rename = "case1", alias = "exact")]
    Exact,
    #[serde(rename = "case2a", alias = "mode_transform_to_delta")]
    ModeTransformToDelta,
    #[serde(rename = "case2b", alias = "delta_to_mode")]
    DeltaToMode,
    #[serde(rename = "case3a", alias = "component_transform_to_delta")]
    ComponentTransformToDelta,
    #[serde(rename = "case3b", alias = "delta_to_component")]
    DeltaToComponent,
}

impl CouplingCase {
    pub fn label(&self) -> &'static str {
        match self {
            CouplingCase::Exact => "case1",
            CouplingCase::ModeTransformToDelta => "case2a",
            CouplingCase::DeltaToMode => "case2b",
            CouplingCase::ComponentTransformToDelta => "case3a",
            CouplingCase::DeltaToComponent => "case3b",
        }
    }
}

/// Per-participant linear map of a coupling.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform<S: Scalar> {
    /// Case 1.
    Identity,
    /// Case 2a: `H̃` is `n_Δ × n_i`.
    ModeToDelta(DMatrix<S>),
    /// Case 2b: `H̃Δ` is `n_i × n_Δ`.
    DeltaToMode(DMatrix<S>),
    /// Case 3a: `Ĥ` is `R_i × R_Δ`.
    ComponentToDelta(DMatrix<S>),
    /// Case 3b: `ĤΔ` is `R_Δ × R_i`.
    DeltaToComponent(DMatrix<S>),
}

impl<S: Scalar> Transform<S> {
    pub fn case(&self) -> CouplingCase {
        match self {
            Transform::Identity => CouplingCase::Exact,
            Transform::ModeToDelta(_) => CouplingCase::ModeTransformToDelta,
            Transform::DeltaToMode(_) => CouplingCase::DeltaToMode,
            Transform::ComponentToDelta(_) => CouplingCase::ComponentTransformToDelta,
            Transform::DeltaToComponent(_) => CouplingCase::DeltaToComponent,
        }
    }

    pub fn matrix(&self) -> Option<&DMatrix<S>> {
        match self {
            Transform::Identity => None,
            Transform::ModeToDelta(h)
            | Transform::DeltaToMode(h)
            | Transform::ComponentToDelta(h)
            | Transform::DeltaToComponent(h) => Some(h),
        }
    }

    /// Factor shape `(n_i, R_i)` implied by the consensus shape.
    pub fn factor_shape(&self, delta_shape: (usize, usize)) -> Result<(usize, usize)> {
        let (nd, rd) = delta_shape;
        let bad = |what: &str, h: &DMatrix<S>| {
            Err(Error::InvalidProblem(format!(
                "{} transform is {}x{}, {what}",
                self.case().label(),
                h.nrows(),
                h.ncols()
            )))
        };
        match self {
            Transform::Identity => Ok(delta_shape),
            Transform::ModeToDelta(h) if h.nrows() != nd => bad(&format!("needs {nd} rows"), h),
            Transform::ModeToDelta(h) => Ok((h.ncols(), rd)),
            Transform::DeltaToMode(h) if h.ncols() != nd => bad(&format!("needs {nd} columns"), h),
            Transform::DeltaToMode(h) => Ok((h.nrows(), rd)),
            Transform::ComponentToDelta(h) if h.ncols() != rd => {
                bad(&format!("needs {rd} columns"), h)
            }
            Transform::ComponentToDelta(h) => Ok((nd, h.nrows())),
            Transform::DeltaToComponent(h) if h.nrows() != rd => {
                bad(&format!("needs {rd} rows"), h)
            }
            Transform::DeltaToComponent(h) => Ok((nd, h.ncols())),
        }
    }

    /// Shape of `A(C)` (and of the dual) for an `n × r` factor.
    pub fn factor_side_shape(&self, n: usize, r: usize) -> Result<(usize, usize)> {
        let mismatch = || Error::shape(format!("transform does not apply to a {n}x{r} factor"));
        match self {
            Transform::ModeToDelta(h) if h.ncols() != n => Err(mismatch()),
            Transform::ModeToDelta(h) => Ok((h.nrows(), r)),
            Transform::ComponentToDelta(h) if h.nrows() != r => Err(mismatch()),
            Transform::ComponentToDelta(h) => Ok((n, h.ncols())),
            _ => Ok((n, r)),
        }
    }

    /// `A(C)`.
    pub fn factor_side(&self, c: &DMatrix<S>) -> DMatrix<S> {
        match self {
            Transform::ModeToDelta(h) => h * c,
            Transform::ComponentToDelta(h) => c * h,
            _ => c.clone(),
        }
    }

    /// Adjoint `Aᵀ(R)`.
    pub fn factor_adjoint(&self, r: &DMatrix<S>) -> DMatrix<S> {
        match self {
            Transform::ModeToDelta(h) => h.tr_mul(r),
            Transform::ComponentToDelta(h) => r * h.transpose(),
            _ => r.clone(),
        }
    }

    /// `B(Δ)`.
    pub fn delta_side(&self, delta: &DMatrix<S>) -> DMatrix<S> {
        match self {
            Transform::DeltaToMode(h) => h * delta,
            Transform::DeltaToComponent(h) => delta * h,
            _ => delta.clone(),
        }
    }

    /// `A(C) − B(Δ)`.
    pub fn residual(&self, c: &DMatrix<S>, delta: &DMatrix<S>) -> DMatrix<S> {
        self.factor_side(c) - self.delta_side(delta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Participant<S: Scalar> {
    /// Index of the tensor in the problem.
    pub tensor: usize,
    pub transform: Transform<S>,
}

/// One linear coupling in one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpec<S: Scalar> {
    mode: usize,
    case: CouplingCase,
    participants: Vec<Participant<S>>,
    delta_shape: (usize, usize),
}

/// Whether every entry is exactly 0 or 1.
fn is_binary<S: Scalar>(h: &DMatrix<S>) -> bool {
    h.iter().all(|&v| v.is_zero() || v == S::one())
}

impl<S: Scalar> CouplingSpec<S> {
    pub fn new(
        mode: usize,
        case: CouplingCase,
        participants: Vec<Participant<S>>,
        delta_shape: (usize, usize),
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidProblem(format!("coupling in mode {mode}: {msg}")));
        if participants.is_empty() {
            return invalid("no participants".into());
        }
        if delta_shape.0 == 0 || delta_shape.1 == 0 {
            return invalid(format!("empty consensus shape {delta_shape:?}"));
        }
        for (k, p) in participants.iter().enumerate() {
            if participants[..k].iter().any(|q| q.tensor == p.tensor) {
                return invalid(format!("tensor {} participates twice", p.tensor));
            }
            if p.transform.case() != case {
                return invalid(format!(
                    "tensor {} has a {} transform in a {} coupling",
                    p.tensor,
                    p.transform.case().label(),
                    case.label()
                ));
            }
            let (n, _) = p.transform.factor_shape(delta_shape)?;
            if case == CouplingCase::ModeTransformToDelta && delta_shape.0 > n {
                return invalid(format!(
                    "case2a needs the consensus row count {} to be at most the mode size {n} of tensor {}",
                    delta_shape.0, p.tensor
                ));
            }
            if case == CouplingCase::DeltaToComponent {
                let h = p.transform.matrix().expect("case3b carries a matrix");
                if is_binary(h) {
                    let cols_ok = h.column_iter().all(|c| c.iter().filter(|v| !v.is_zero()).count() == 1);
                    let rows_ok = h.row_iter().all(|r| r.iter().filter(|v| !v.is_zero()).count() <= 1);
                    if !(cols_ok && rows_ok) {
                        return invalid(format!(
                            "selection matrix of tensor {} needs exactly one 1 per column and at most one per row",
                            p.tensor
                        ));
                    }
                }
            }
        }
        let spec = Self {
            mode,
            case,
            participants,
            delta_shape,
        };
        if case == CouplingCase::DeltaToComponent {
            let (_, rd) = delta_shape;
            for j in 0..rd {
                let used = spec.participants.iter().any(|p| {
                    p.transform.matrix().is_some_and(|h| h.row(j).iter().any(|v| !v.is_zero()))
                });
                if !used {
                    return invalid(format!("consensus column {j} is used by no participant"));
                }
            }
        }
        DeltaSolver::new(&spec, None).map_err(|e| match e {
            Error::Singular(msg) => Error::InvalidProblem(format!(
                "coupling in mode {mode}: consensus update is singular ({msg})"
            )),
            other => other,
        })?;
        Ok(spec)
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn case(&self) -> CouplingCase {
        self.case
    }

    pub fn participants(&self) -> &[Participant<S>] {
        &self.participants
    }

    pub fn delta_shape(&self) -> (usize, usize) {
        self.delta_shape
    }

    pub fn participant(&self, tensor: usize) -> Option<&Participant<S>> {
        self.participants.iter().find(|p| p.tensor == tensor)
    }

    /// Checks that each participant's factor has the `(rows, rank)` implied
    /// by its transform.
    pub fn check_factor_shapes(&self, shape_of: impl Fn(usize) -> Option<(usize, usize)>) -> Result<()> {
        for p in &self.participants {
            let expected = p.transform.factor_shape(self.delta_shape)?;
            let actual = shape_of(p.tensor).ok_or_else(|| {
                Error::InvalidProblem(format!(
                    "coupling in mode {}: tensor {} has no such mode",
                    self.mode, p.tensor
                ))
            })?;
            if actual != expected {
                return Err(Error::InvalidProblem(format!(
                    "coupling in mode {}: tensor {} factor is {}x{}, the {} transform needs {}x{}",
                    self.mode,
                    p.tensor,
                    actual.0,
                    actual.1,
                    self.case.label(),
                    expected.0,
                    expected.1
                )));
            }
        }
        Ok(())
    }
}

/// Consensus matrix and per-participant duals of one coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState<S: Scalar> {
    pub delta: DMatrix<S>,
    /// Ordered like the coupling's participants.
    pub duals: Vec<DMatrix<S>>,
}

/// `‖A(C) − B(Δ)‖ / ‖A(C)‖`.
pub fn coupling_residual<S: Scalar>(transform: &Transform<S>, c: &DMatrix<S>, delta: &DMatrix<S>) -> S {
    let side = transform.factor_side(c);
    let r = (&side - transform.delta_side(delta)).norm();
    r / side.norm().max(S::lit(RESIDUAL_GUARD))
}

/// `μ + A(C) − B(Δ)`.
pub fn update_dual_delta<S: Scalar>(
    transform: &Transform<S>,
    c: &DMatrix<S>,
    delta: &DMatrix<S>,
    mu: &DMatrix<S>,
) -> DMatrix<S> {
    mu + transform.residual(c, delta)
}

/// Solves `min_Δ Σ_i w_i ‖B_i(Δ) − (A_i(C_i) + μ_i)‖²` for fixed weights.
#[derive(Debug, Clone)]
pub struct DeltaSolver<S: Scalar> {
    case: CouplingCase,
    weights: Vec<S>,
    gram: Option<SpdFactor<S>>,
}

impl<S: Scalar> DeltaSolver<S> {
    /// `weights` default to one per participant.
    pub fn new(spec: &CouplingSpec<S>, weights: Option<&[S]>) -> Result<Self> {
        let weights = match weights {
            Some(w) if w.len() != spec.participants.len() => {
                return Err(Error::shape("one consensus weight per participant"))
            }
            Some(w) if w.iter().any(|&v| !(v > S::zero())) => {
                return Err(Error::param("consensus weights must be positive"))
            }
            Some(w) => w.to_vec(),
            None => vec![S::one(); spec.participants.len()],
        };
        let weighted_gram = |f: &dyn Fn(&DMatrix<S>) -> DMatrix<S>| {
            spec.participants
                .iter()
                .zip(&weights)
                .map(|(p, &w)| f(p.transform.matrix().expect("transformed case")) * w)
                .reduce(|a, b| a + b)
                .expect("at least one participant")
        };
        let gram = match spec.case {
            CouplingCase::DeltaToMode => Some(SpdFactor::new(
                &weighted_gram(&|h| h.tr_mul(h)),
                "sum of H̃Δᵀ H̃Δ",
            )?),
            CouplingCase::DeltaToComponent => Some(SpdFactor::new(
                &weighted_gram(&|h| h * h.transpose()),
                "sum of ĤΔ ĤΔᵀ",
            )?),
            _ => None,
        };
        Ok(Self {
            case: spec.case,
            weights,
            gram,
        })
    }

    pub fn solve(
        &self,
        spec: &CouplingSpec<S>,
        factors: &[&DMatrix<S>],
        duals: &[DMatrix<S>],
    ) -> Result<DMatrix<S>> {
        let n = spec.participants.len();
        if factors.len() != n || duals.len() != n {
            return Err(Error::shape(format!(
                "consensus update needs {n} factors and duals, got {} and {}",
                factors.len(),
                duals.len()
            )));
        }
        let mut acc: Option<DMatrix<S>> = None;
        for ((p, c), (mu, &w)) in spec.participants.iter().zip(factors).zip(duals.iter().zip(&self.weights)) {
            let side = p.transform.factor_side(c);
            if side.shape() != mu.shape() {
                return Err(Error::shape(format!(
                    "dual of tensor {} is {:?}, constraint side is {:?}",
                    p.tensor,
                    mu.shape(),
                    side.shape()
                )));
            }
            // Bᵀ applied to the weighted target.
            let target = (side + mu) * w;
            let term = match &p.transform {
                Transform::DeltaToMode(h) => h.tr_mul(&target),
                Transform::DeltaToComponent(h) => target * h.transpose(),
                _ => target,
            };
            acc = Some(match acc {
                Some(a) => a + term,
                None => term,
            });
        }
        let acc = acc.expect("at least one participant");
        let delta = match self.case {
            CouplingCase::DeltaToMode => self.gram.as_ref().expect("gram").solve_left(&acc),
            CouplingCase::DeltaToComponent => self.gram.as_ref().expect("gram").solve_right(&acc),
            _ => {
                let total = self.weights.iter().fold(S::zero(), |a, &b| a + b);
                acc / total
            }
        };
        if delta.shape() != spec.delta_shape {
            return Err(Error::shape(format!(
                "consensus update produced {:?}, expected {:?}",
                delta.shape(),
                spec.delta_shape
            )));
        }
        Ok(delta)
    }
}

/// Consensus update with optional per-participant weights.
pub fn update_delta<S: Scalar>(
    spec: &CouplingSpec<S>,
    factors: &[&DMatrix<S>],
    duals: &[DMatrix<S>],
    weights: Option<&[S]>,
) -> Result<DMatrix<S>> {
    DeltaSolver::new(spec, weights)?.solve(spec, factors, duals)
}

#[derive(Debug, Clone)]
enum FactorSystem<S: Scalar> {
    /// No penalty terms: plain least squares against `w·MᵀM`.
    LeastSquares(DMatrix<S>),
    Right(SpdFactor<S>),
    Sylvester(SylvesterSolver<S>),
}

/// Exact minimizer of the Frobenius factor subproblem
///
/// ```text
/// w‖T_(d) − X Mᵀ‖² + ρ/2 ‖X − (Z − μz)‖² + ρ/2 ‖A(X) − (B(Δ) − μΔ)‖²
/// ```
///
/// with the system matrix factored once and reused across inner iterations.
#[derive(Debug, Clone)]
pub struct FrobeniusFactorUpdate<'a, S: Scalar> {
    transform: Option<&'a Transform<S>>,
    rhs_base: DMatrix<S>,
    half_rho: S,
    has_split: bool,
    system: FactorSystem<S>,
}

impl<'a, S: Scalar> FrobeniusFactorUpdate<'a, S> {
    /// `mttkrp` is `T_(d) M` and `gram` is `MᵀM`.
    pub fn new(
        transform: Option<&'a Transform<S>>,
        mttkrp: &DMatrix<S>,
        gram: &DMatrix<S>,
        weight: S,
        rho: S,
        has_split: bool,
    ) -> Result<Self> {
        let r = gram.nrows();
        if !gram.is_square() || mttkrp.ncols() != r {
            return Err(Error::shape(format!(
                "factor update operands: mttkrp {:?}, gram {:?}",
                mttkrp.shape(),
                gram.shape()
            )));
        }
        if !(weight >= S::zero()) {
            return Err(Error::param("tensor weight must be nonnegative"));
        }
        let coupled = transform.is_some();
        if (coupled || has_split) && !(rho > S::zero()) {
            return Err(Error::Singular(format!("step size {} is not positive", rho.to_f64_lossy())));
        }
        let n = mttkrp.nrows();
        if let Some(t) = transform {
            t.factor_side_shape(n, r)?;
        }
        let half_rho = rho * S::lit(0.5);
        let split_count = if has_split { S::one() } else { S::zero() };
        let wg = gram * weight;
        let system = match transform {
            None if !has_split => FactorSystem::LeastSquares(wg),
            Some(Transform::ModeToDelta(h)) => {
                let a = (DMatrix::identity(n, n) * split_count + h.tr_mul(h)) * half_rho;
                FactorSystem::Sylvester(SylvesterSolver::new(&a, &wg)?)
            }
            Some(Transform::ComponentToDelta(h)) => {
                let m = wg + (DMatrix::identity(r, r) * split_count + h * h.transpose()) * half_rho;
                FactorSystem::Right(SpdFactor::new(&m, "case3a factor system")?)
            }
            _ => {
                let count = split_count + if coupled { S::one() } else { S::zero() };
                let m = wg + DMatrix::identity(r, r) * (half_rho * count);
                FactorSystem::Right(SpdFactor::new(&m, "factor system")?)
            }
        };
        Ok(Self {
            transform,
            rhs_base: mttkrp * weight,
            half_rho,
            has_split,
            system,
        })
    }

    /// `split_target = Z − μz` and `coupling_target = B(Δ) − μΔ`; each must be
    /// present exactly when the update was built with that term.
    pub fn solve(
        &self,
        split_target: Option<&DMatrix<S>>,
        coupling_target: Option<&DMatrix<S>>,
    ) -> Result<DMatrix<S>> {
        let mut rhs = self.rhs_base.clone();
        match (self.has_split, split_target) {
            (true, Some(z)) if z.shape() == rhs.shape() => rhs += z * self.half_rho,
            (false, None) => {}
            _ => return Err(Error::shape("split target does not match the factor update")),
        }
        match (self.transform, coupling_target) {
            (Some(t), Some(target)) => {
                let lifted = t.factor_adjoint(target);
                if lifted.shape() != rhs.shape() {
                    return Err(Error::shape("coupling target does not match the transform"));
                }
                rhs += lifted * self.half_rho;
            }
            (None, None) => {}
            _ => return Err(Error::shape("coupling target does not match the factor update")),
        }
        Ok(match &self.system {
            FactorSystem::LeastSquares(wg) => solve_right_psd(wg, &rhs),
            FactorSystem::Right(f) => f.solve_right(&rhs),
            FactorSystem::Sylvester(s) => s.solve(&rhs)?,
        })
    }
}

/// Split and coupling terms of one factor update.
#[derive(Debug, Clone, Copy, Default)]
pub struct PenaltyTerms<'a, S: Scalar> {
    /// `(Z, μz)`.
    pub split: Option<(&'a DMatrix<S>, &'a DMatrix<S>)>,
    /// `(transform, Δ, μΔ)`.
    pub coupling: Option<(&'a Transform<S>, &'a DMatrix<S>, &'a DMatrix<S>)>,
}

/// One-shot Frobenius factor update for `mode` of `k` against `t`.
pub fn update_factor_frobenius<S: Scalar>(
    t: &DenseTensor<S>,
    k: &KruskalFactors<S>,
    mode: usize,
    weight: S,
    rho: S,
    terms: PenaltyTerms<'_, S>,
) -> Result<DMatrix<S>> {
    let tm = mttkrp(t, k, mode)?;
    let gram = gram_hadamard(k, mode)?;
    let split_target = terms.split.map(|(z, mu)| z - mu);
    let coupling_target = terms.coupling.map(|(tr, delta, mu)| tr.delta_side(delta) - mu);
    FrobeniusFactorUpdate::new(
        terms.coupling.map(|(tr, _, _)| tr),
        &tm,
        &gram,
        weight,
        rho,
        terms.split.is_some(),
    )?
    .solve(split_target.as_ref(), coupling_target.as_ref())
}
