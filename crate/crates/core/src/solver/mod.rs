//! Alternating optimization over modes, each mode solved inexactly by ADMM.

mod admm;
mod init;
mod problem;
mod trace;

pub use admm::{
    admm_mode_update, compute_rho, CouplingResidualTerm, InnerResiduals, ModeReport,
    SplitResidualTerm, Workspace, RHO_FLOOR,
};
pub use init::{initialize_state, initialize_state_with};
pub use problem::{normalize_blocks, ProblemSpec, TensorBlock};
pub use trace::{trace_header, write_trace_csv, TraceRecord};

use std::time::Instant;

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{StandardNormal, StandardUniform};
use serde::{Deserialize, Serialize};

use crate::coupling::{coupling_residual, ConsensusState, RESIDUAL_GUARD};
use crate::error::{Error, Result};
use crate::loss::LbfgsbOptions;
use crate::metrics::factor_match_score;
use crate::rng::{generator, Generator};
use crate::scalar::Scalar;
use crate::tensor::{reconstruct, KruskalFactors};

/// How factor matrices are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    /// Leading left singular vectors of the (concatenated, when exactly
    /// coupled) unfoldings. Falls back to `Random` under transformed
    /// couplings.
    Svd,
    /// Standard uniform for nonnegative factors, standard normal otherwise.
    #[default]
    Random,
    RandomNormal,
    RandomUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub inner_max_iters: usize,
    /// Bound on the two primal inner residuals.
    pub inner_tol_primal: f64,
    /// Bound on the two dual inner residuals.
    pub inner_tol_dual: f64,
    pub outer_tol_abs: f64,
    pub outer_tol_rel: f64,
    pub outer_max_iters: usize,
    pub seed: u64,
    /// Generator stream; distinct streams give independent draws.
    pub stream: u64,
    pub init: InitMethod,
    pub subsolver: LbfgsbOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            inner_max_iters: 5,
            inner_tol_primal: 1e-4,
            inner_tol_dual: 1e-4,
            outer_tol_abs: 1e-4,
            outer_tol_rel: 1e-12,
            outer_max_iters: 10_000,
            seed: 0,
            stream: 0,
            init: InitMethod::Random,
            subsolver: LbfgsbOptions::default(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.inner_max_iters == 0 {
            return Err(Error::param("inner_max_iters must be at least 1"));
        }
        for (name, v) in [
            ("inner_tol_primal", self.inner_tol_primal),
            ("inner_tol_dual", self.inner_tol_dual),
            ("outer_tol_abs", self.outer_tol_abs),
            ("outer_tol_rel", self.outer_tol_rel),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        self.subsolver.validate()
    }
}

/// Splitting variable `Z` and its scaled dual `μz`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitState<S: Scalar> {
    pub z: DMatrix<S>,
    pub dual: DMatrix<S>,
}

/// All iterates of the method.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState<S: Scalar> {
    pub factors: Vec<KruskalFactors<S>>,
    /// `splits[i][d]` exists when factor `(i, d)` is regularized.
    pub splits: Vec<Vec<Option<SplitState<S>>>>,
    /// One per coupling, in problem order.
    pub consensus: Vec<ConsensusState<S>>,
}

/// The three terms monitored for termination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective<S> {
    /// `Σ w_i L_i(T_i, [[C_i]])`
    pub tensors: S,
    /// `Σ ‖A(C) − B(Δ)‖ / ‖A(C)‖` over coupled factors.
    pub couplings: S,
    /// `Σ ‖C − Z‖ / ‖C‖` over regularized factors.
    pub constraints: S,
}

impl<S: Scalar> Objective<S> {
    fn terms(&self) -> [S; 3] {
        [self.tensors, self.couplings, self.constraints]
    }

    pub fn is_finite(&self) -> bool {
        self.terms().iter().all(|v| v.is_finite_value())
    }
}

pub fn evaluate_objective<S: Scalar>(problem: &ProblemSpec<S>, state: &SolverState<S>) -> Result<Objective<S>> {
    let mut tensors = S::zero();
    for (b, k) in problem.tensors().iter().zip(&state.factors) {
        let model = reconstruct(k, b.data.shape())?;
        tensors += b.weight * b.loss.accumulate(b.data.values(), model.values(), None)?;
    }
    let mut couplings = S::zero();
    for (spec, cs) in problem.couplings().iter().zip(&state.consensus) {
        for p in spec.participants() {
            couplings += coupling_residual(&p.transform, state.factors[p.tensor].factor(spec.mode()), &cs.delta);
        }
    }
    let mut constraints = S::zero();
    for (k, splits) in state.factors.iter().zip(&state.splits) {
        for (d, s) in splits.iter().enumerate() {
            if let Some(s) = s {
                let c = k.factor(d);
                constraints += (c - &s.z).norm() / c.norm().max(S::lit(RESIDUAL_GUARD));
            }
        }
    }
    Ok(Objective { tensors, couplings, constraints })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Every objective term met its absolute or relative tolerance.
    Converged,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct FitResult<S: Scalar> {
    pub state: SolverState<S>,
    pub trace: Vec<TraceRecord>,
    pub termination: Termination,
}

impl<S: Scalar> FitResult<S> {
    pub fn factors(&self) -> &[KruskalFactors<S>] {
        &self.state.factors
    }

    pub fn deltas(&self) -> Vec<&DMatrix<S>> {
        self.state.consensus.iter().map(|c| &c.delta).collect()
    }

    pub fn final_objective(&self) -> Option<&TraceRecord> {
        self.trace.last()
    }
}

fn term_converged<S: Scalar>(current: S, previous: Option<S>, abs: S, rel: S) -> bool {
    current < abs || previous.is_some_and(|p| (current - p).abs() / current.abs() < rel)
}

/// Replaces any all-zero factor by a random one.
fn rescue_zero_factors<S: Scalar>(
    problem: &ProblemSpec<S>,
    state: &mut SolverState<S>,
    mode: usize,
    rng: &mut Generator,
) -> Result<()> {
    for (i, b) in problem.tensors().iter().enumerate() {
        if mode >= b.order() || !state.factors[i].factor(mode).iter().all(|v| v.is_zero()) {
            continue;
        }
        warn!("factor of tensor {i} in mode {mode} vanished; drawing a new random factor");
        let (n, r) = state.factors[i].factor(mode).shape();
        let fresh = if b.is_nonnegative(mode) {
            DMatrix::from_fn(n, r, |_, _| S::lit(rng.sample::<f64, _>(StandardUniform)))
        } else {
            DMatrix::from_fn(n, r, |_, _| S::lit(rng.sample::<f64, _>(StandardNormal)))
        };
        state.factors[i].set_factor(mode, fresh)?;
    }
    Ok(())
}

/// Runs the alternating sweep until the objective terms settle or the
/// iteration cap is hit. With `truth`, every trace record carries the factor
/// match score against it.
pub fn fit<S: Scalar>(
    problem: &ProblemSpec<S>,
    opts: &SolverOptions,
    truth: Option<&[KruskalFactors<S>]>,
) -> Result<FitResult<S>> {
    opts.validate()?;
    let mut rng = generator(opts.seed, opts.stream);
    let state = initialize_state_with(problem, opts, &mut rng)?;
    fit_from(problem, opts, truth, state, &mut rng)
}

/// Like [`fit`], starting from a given state.
pub fn fit_from<S: Scalar>(
    problem: &ProblemSpec<S>,
    opts: &SolverOptions,
    truth: Option<&[KruskalFactors<S>]>,
    mut state: SolverState<S>,
    rng: &mut Generator,
) -> Result<FitResult<S>> {
    opts.validate()?;
    let ws = Workspace::new(problem)?;
    let start = Instant::now();
    let modes = problem.max_order();
    let abs = S::lit(opts.outer_tol_abs);
    let rel = S::lit(opts.outer_tol_rel);
    let mut trace = Vec::new();
    let mut previous: Option<Objective<S>> = None;
    let mut termination = Termination::IterationCap;

    for iteration in 1..=opts.outer_max_iters {
        let mut inner = Vec::with_capacity(modes);
        for d in 0..modes {
            let report = admm_mode_update(problem, d, &mut state, opts, &ws)?;
            inner.push(report.inner_iterations);
            rescue_zero_factors(problem, &mut state, d, rng)?;
        }
        let obj = evaluate_objective(problem, &state)?;
        if !obj.is_finite() {
            return Err(Error::NonFinite {
                iteration,
                what: format!(
                    "objective terms ({}, {}, {})",
                    obj.tensors.to_f64_lossy(),
                    obj.couplings.to_f64_lossy(),
                    obj.constraints.to_f64_lossy()
                ),
            });
        }
        let fms = truth
            .map(|t| factor_match_score(&state.factors, t).map(|r| r.fms))
            .transpose()?;
        trace.push(TraceRecord {
            iteration,
            f_tensors: obj.tensors.to_f64_lossy(),
            f_couplings: obj.couplings.to_f64_lossy(),
            f_constraints: obj.constraints.to_f64_lossy(),
            seconds: start.elapsed().as_secs_f64(),
            inner_iterations: inner,
            fms,
        });
        let done = obj
            .terms()
            .iter()
            .enumerate()
            .all(|(j, &v)| term_converged(v, previous.map(|p| p.terms()[j]), abs, rel));
        if done {
            termination = Termination::Converged;
            break;
        }
        previous = Some(obj);
    }
    Ok(FitResult { state, trace, termination })
}
