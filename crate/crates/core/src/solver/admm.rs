//! One mode of the alternating sweep: the three-block ADMM over factors,
//! consensus matrix and splitting variables.

use log::debug;
use nalgebra::DMatrix;

use super::problem::ProblemSpec;
use super::{SolverOptions, SolverState};
use crate::coupling::{
    CouplingSpec, DeltaSolver, FrobeniusFactorUpdate, Transform, RESIDUAL_GUARD,
};
use crate::error::Result;
use crate::loss::{Bounds, CouplingPenalty, FactorSubproblem, SplitPenalty};
use crate::prox::ProxOperator;
use crate::scalar::Scalar;
use crate::tensor::{co_khatri_rao, gram_hadamard, mttkrp, unfold, KruskalFactors};

/// Floor for the step size when every co-factor vanishes.
pub const RHO_FLOOR: f64 = 1e-12;

/// `trace(M_dᵀ M_d) / R`, floored at [`RHO_FLOOR`].
pub fn compute_rho<S: Scalar>(k: &KruskalFactors<S>, mode: usize) -> Result<S> {
    k.check_mode(mode)?;
    let rank = k.rank();
    let mut total = S::zero();
    for r in 0..rank {
        let mut p = S::one();
        for (d, f) in k.factors().iter().enumerate() {
            if d != mode {
                p *= f.column(r).norm_squared();
            }
        }
        total += p;
    }
    Ok((total / S::lit(rank as f64)).max(S::lit(RHO_FLOOR)))
}

/// The four relative residuals that decide when the inner loop stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerResiduals<S> {
    /// `Σ ‖C − Z‖ / ‖C‖`
    pub primal_split: S,
    /// `Σ ‖A(C) − B(Δ)‖ / ‖A(C)‖`
    pub primal_coupling: S,
    /// `Σ ‖Z⁺ − Z‖ / ‖μz‖`
    pub dual_split: S,
    /// `Σ ‖B(Δ⁺ − Δ)‖ / ‖μΔ‖`
    pub dual_coupling: S,
}

/// Inputs for the split terms of [`InnerResiduals`].
#[derive(Debug, Clone, Copy)]
pub struct SplitResidualTerm<'a, S: Scalar> {
    pub c: &'a DMatrix<S>,
    pub z_old: &'a DMatrix<S>,
    pub z_new: &'a DMatrix<S>,
    /// The dual before this iteration's update.
    pub dual: &'a DMatrix<S>,
}

/// Inputs for the coupling terms of [`InnerResiduals`].
#[derive(Debug, Clone, Copy)]
pub struct CouplingResidualTerm<'a, S: Scalar> {
    pub transform: &'a Transform<S>,
    pub c: &'a DMatrix<S>,
    pub delta_old: &'a DMatrix<S>,
    pub delta_new: &'a DMatrix<S>,
    /// The dual before this iteration's update.
    pub dual: &'a DMatrix<S>,
}

fn ratio<S: Scalar>(num: S, den: S) -> S {
    num / den.max(S::lit(RESIDUAL_GUARD))
}

impl<S: Scalar> InnerResiduals<S> {
    pub fn compute(splits: &[SplitResidualTerm<'_, S>], couplings: &[CouplingResidualTerm<'_, S>]) -> Self {
        let mut r = Self {
            primal_split: S::zero(),
            primal_coupling: S::zero(),
            dual_split: S::zero(),
            dual_coupling: S::zero(),
        };
        for s in splits {
            r.primal_split += ratio((s.c - s.z_new).norm(), s.c.norm());
            r.dual_split += ratio((s.z_new - s.z_old).norm(), s.dual.norm());
        }
        for c in couplings {
            let side = c.transform.factor_side(c.c);
            r.primal_coupling += ratio((&side - c.transform.delta_side(c.delta_new)).norm(), side.norm());
            let step = c.transform.delta_side(&(c.delta_new - c.delta_old));
            r.dual_coupling += ratio(step.norm(), c.dual.norm());
        }
        r
    }

    pub fn satisfied(&self, tol_primal: S, tol_dual: S) -> bool {
        self.primal_split <= tol_primal
            && self.primal_coupling <= tol_primal
            && self.dual_split <= tol_dual
            && self.dual_coupling <= tol_dual
    }
}

/// Data derived from the problem once per fit.
#[derive(Debug)]
pub struct Workspace<S: Scalar> {
    /// Mode unfoldings of tensors whose loss needs the iterative subsolver.
    unfolded: Vec<Vec<Option<DMatrix<S>>>>,
    /// Data-only loss terms per tensor.
    constants: Vec<S>,
    prox: Vec<Vec<ProxOperator<S>>>,
}

impl<S: Scalar> Workspace<S> {
    pub fn new(problem: &ProblemSpec<S>) -> Result<Self> {
        let mut unfolded = Vec::new();
        let mut prox = Vec::new();
        let mut constants = Vec::new();
        for b in problem.tensors() {
            constants.push(if b.loss.is_frobenius() { S::zero() } else { b.loss.data_constant(b.data.values())? });
            let per_mode = (0..b.order())
                .map(|d| (!b.loss.is_frobenius()).then(|| unfold(&b.data, d)).transpose())
                .collect::<Result<Vec<_>>>()?;
            unfolded.push(per_mode);
            prox.push(b.regularizers.iter().cloned().map(ProxOperator::new).collect());
        }
        Ok(Self { unfolded, constants, prox })
    }
}

/// Outcome of one mode update.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport<S> {
    /// Largest inner iteration count over the groups updated in this mode.
    pub inner_iterations: usize,
    /// Step size per tensor; `None` for tensors without this mode.
    pub rho: Vec<Option<S>>,
    pub last_residuals: Option<InnerResiduals<S>>,
}

enum Update<'a, S: Scalar> {
    Frobenius(FrobeniusFactorUpdate<'a, S>),
    General { cokr: DMatrix<S> },
}

struct Member<'a, S: Scalar> {
    tensor: usize,
    rho: S,
    update: Update<'a, S>,
    /// Position among the coupling's participants and its transform.
    coupled: Option<(usize, &'a Transform<S>)>,
    split: bool,
}

/// Updates every factor of `mode` (and the consensus and splitting variables
/// attached to it) by ADMM, with step sizes recomputed from the current
/// co-factors.
pub fn admm_mode_update<S: Scalar>(
    problem: &ProblemSpec<S>,
    mode: usize,
    state: &mut SolverState<S>,
    opts: &SolverOptions,
    ws: &Workspace<S>,
) -> Result<ModeReport<S>> {
    let rho = problem
        .tensors()
        .iter()
        .zip(&state.factors)
        .map(|(b, k)| (mode < b.order()).then(|| compute_rho(k, mode)).transpose())
        .collect::<Result<Vec<_>>>()?;

    let mut report = ModeReport {
        inner_iterations: 0,
        rho: rho.clone(),
        last_residuals: None,
    };
    let coupling = problem.coupling_in_mode(mode);
    if let Some((ci, spec)) = coupling {
        let group: Vec<usize> = spec.participants().iter().map(|p| p.tensor).collect();
        let (count, res) = run_group(problem, mode, &group, Some((ci, spec)), &rho, state, opts, ws)?;
        report.inner_iterations = count;
        report.last_residuals = res;
    }
    for (i, b) in problem.tensors().iter().enumerate() {
        if mode >= b.order() || coupling.is_some_and(|(_, spec)| spec.participant(i).is_some()) {
            continue;
        }
        let (count, res) = run_group(problem, mode, &[i], None, &rho, state, opts, ws)?;
        if count > report.inner_iterations {
            report.inner_iterations = count;
        }
        if report.last_residuals.is_none() {
            report.last_residuals = res;
        }
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run_group<'a, S: Scalar>(
    problem: &'a ProblemSpec<S>,
    mode: usize,
    group: &[usize],
    coupling: Option<(usize, &'a CouplingSpec<S>)>,
    rho: &[Option<S>],
    state: &mut SolverState<S>,
    opts: &SolverOptions,
    ws: &Workspace<S>,
) -> Result<(usize, Option<InnerResiduals<S>>)> {
    let mut members = Vec::with_capacity(group.len());
    for (pos, &i) in group.iter().enumerate() {
        let b = problem.tensor(i);
        let k = &state.factors[i];
        let r = rho[i].expect("group members have this mode");
        let coupled = coupling.map(|(_, spec)| {
            let p = &spec.participants()[pos];
            debug_assert_eq!(p.tensor, i);
            (pos, &p.transform)
        });
        let split = state.splits[i][mode].is_some();
        let update = if b.loss.is_frobenius() {
            let tm = mttkrp(&b.data, k, mode)?;
            let gram = gram_hadamard(k, mode)?;
            Update::Frobenius(FrobeniusFactorUpdate::new(
                coupled.map(|(_, t)| t),
                &tm,
                &gram,
                b.weight,
                r,
                split,
            )?)
        } else {
            Update::General { cokr: co_khatri_rao(k, mode)? }
        };
        members.push(Member { tensor: i, rho: r, update, coupled, split });
    }

    let plain = coupling.is_none() && members.iter().all(|m| !m.split);
    let max_iters = if plain { 1 } else { opts.inner_max_iters };
    let delta_solver = match coupling {
        Some((_, spec)) => {
            let weights: Vec<S> = members.iter().map(|m| m.rho).collect();
            Some(DeltaSolver::new(spec, Some(&weights))?)
        }
        None => None,
    };
    let tol_p = S::lit(opts.inner_tol_primal);
    let tol_d = S::lit(opts.inner_tol_dual);

    let mut last = None;
    for iter in 1..=max_iters {
        // Factor updates.
        for m in &members {
            let i = m.tensor;
            let split_target = state.splits[i][mode].as_ref().map(|s| &s.z - &s.dual);
            let coupling_target = match (coupling, m.coupled) {
                (Some((ci, _)), Some((pos, t))) => {
                    let cs = &state.consensus[ci];
                    Some(t.delta_side(&cs.delta) - &cs.duals[pos])
                }
                _ => None,
            };
            let c = match &m.update {
                Update::Frobenius(u) => u.solve(split_target.as_ref(), coupling_target.as_ref())?,
                Update::General { cokr } => {
                    let b = problem.tensor(i);
                    let unfolded = ws.unfolded[i][mode].as_ref().expect("unfolded for iterative losses");
                    let sub = FactorSubproblem {
                        loss: b.loss,
                        unfolded,
                        cokr,
                        data_constant: ws.constants[i],
                        weight: b.weight,
                        rho: m.rho,
                        split: split_target.as_ref().map(|target| SplitPenalty { target }),
                        coupling: match (m.coupled, coupling_target.as_ref()) {
                            (Some((_, transform)), Some(target)) => Some(CouplingPenalty { transform, target }),
                            _ => None,
                        },
                        bounds: if b.loss.requires_nonnegative_model() {
                            Bounds::nonnegative()
                        } else {
                            Bounds::none()
                        },
                    };
                    let out = sub.solve(state.factors[i].factor(mode), &opts.subsolver)?;
                    if !out.improved {
                        debug!("tensor {i}, mode {mode}: subsolver made no progress ({:?})", out.report.status);
                    }
                    out.x
                }
            };
            state.factors[i].set_factor(mode, c)?;
        }
        if plain {
            return Ok((1, None));
        }

        // Consensus update.
        let delta_old = match (coupling, &delta_solver) {
            (Some((ci, spec)), Some(solver)) => {
                let factors: Vec<&DMatrix<S>> = members.iter().map(|m| state.factors[m.tensor].factor(mode)).collect();
                let new = solver.solve(spec, &factors, &state.consensus[ci].duals)?;
                Some(std::mem::replace(&mut state.consensus[ci].delta, new))
            }
            _ => None,
        };

        // Splitting variables and their duals.
        let mut split_old = Vec::new();
        for m in members.iter().filter(|m| m.split) {
            let i = m.tensor;
            let c = state.factors[i].factor(mode);
            let s = state.splits[i][mode].as_mut().expect("split member");
            let z = ws.prox[i][mode].apply(&(c + &s.dual), S::one() / m.rho)?;
            let z_old = std::mem::replace(&mut s.z, z);
            let dual_old = s.dual.clone();
            s.dual += c - &s.z;
            split_old.push((i, z_old, dual_old));
        }

        // Coupling duals.
        let mut coupling_old = Vec::new();
        if let Some((ci, _)) = coupling {
            for m in &members {
                let (pos, t) = m.coupled.expect("coupled member");
                let c = state.factors[m.tensor].factor(mode);
                let cs = &mut state.consensus[ci];
                let residual = t.residual(c, &cs.delta);
                let old = cs.duals[pos].clone();
                cs.duals[pos] += residual;
                coupling_old.push((m.tensor, pos, t, old));
            }
        }

        let split_terms: Vec<_> = split_old
            .iter()
            .map(|(i, z_old, dual)| {
                let s = state.splits[*i][mode].as_ref().expect("split member");
                SplitResidualTerm {
                    c: state.factors[*i].factor(mode),
                    z_old,
                    z_new: &s.z,
                    dual,
                }
            })
            .collect();
        let coupling_terms: Vec<_> = match (coupling, &delta_old) {
            (Some((ci, _)), Some(delta_old)) => coupling_old
                .iter()
                .map(|(i, _, t, dual)| CouplingResidualTerm {
                    transform: *t,
                    c: state.factors[*i].factor(mode),
                    delta_old,
                    delta_new: &state.consensus[ci].delta,
                    dual,
                })
                .collect(),
            _ => Vec::new(),
        };
        let res = InnerResiduals::compute(&split_terms, &coupling_terms);
        last = Some(res);
        if res.satisfied(tol_p, tol_d) {
            return Ok((iter, last));
        }
    }
    Ok((max_iters, last))
}
