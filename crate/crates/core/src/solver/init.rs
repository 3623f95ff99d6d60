//! Starting points for the factors and the auxiliary ADMM variables.

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{StandardNormal, StandardUniform};

use super::problem::ProblemSpec;
use super::{InitMethod, SolverOptions, SolverState, SplitState};
use crate::coupling::{ConsensusState, CouplingCase};
use crate::error::Result;
use crate::prox::ProxOperator;
use crate::rng::{generator, Generator};
use crate::scalar::Scalar;
use crate::tensor::{unfold, KruskalFactors};

fn normal<S: Scalar>(rng: &mut Generator, rows: usize, cols: usize) -> DMatrix<S> {
    DMatrix::from_fn(rows, cols, |_, _| S::lit(rng.sample::<f64, _>(StandardNormal)))
}

fn uniform<S: Scalar>(rng: &mut Generator, rows: usize, cols: usize) -> DMatrix<S> {
    DMatrix::from_fn(rows, cols, |_, _| S::lit(rng.sample::<f64, _>(StandardUniform)))
}

/// Leading `rank` left singular vectors of `[X_1 X_2 …]`, from the
/// eigenvectors of `Σ X_j X_jᵀ`. Missing columns (rank above the row count)
/// are drawn at random.
fn leading_singular_vectors<S: Scalar>(
    unfoldings: &[DMatrix<S>],
    rank: usize,
    rng: &mut Generator,
) -> DMatrix<S> {
    let n = unfoldings[0].nrows();
    let mut g = DMatrix::<S>::zeros(n, n);
    for x in unfoldings {
        g += x * x.transpose();
    }
    let eig = g.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = normal::<S>(rng, n, rank);
    for (r, &j) in order.iter().take(rank).enumerate() {
        let mut v = eig.eigenvectors.column(j).into_owned();
        // Fix the sign so the column sums to a nonnegative value.
        if v.sum() < S::zero() {
            v.neg_mut();
        }
        out.set_column(r, &v);
    }
    out
}

/// Initial state drawn from the generator named by the options' seed and
/// stream.
pub fn initialize_state<S: Scalar>(problem: &ProblemSpec<S>, opts: &SolverOptions) -> Result<SolverState<S>> {
    initialize_state_with(problem, opts, &mut generator(opts.seed, opts.stream))
}

/// Initial state drawn from `rng`: factors first (tensor by tensor, mode by
/// mode), then splitting variables and their duals, then consensus matrices
/// and their duals.
pub fn initialize_state_with<S: Scalar>(
    problem: &ProblemSpec<S>,
    opts: &SolverOptions,
    rng: &mut Generator,
) -> Result<SolverState<S>> {
    let mut method = opts.init;
    if method == InitMethod::Svd
        && problem.couplings().iter().any(|c| c.case() != CouplingCase::Exact)
    {
        warn!("singular-vector initialization needs exact couplings; using random factors");
        method = InitMethod::Random;
    }

    let mut factors = Vec::with_capacity(problem.tensors().len());
    for (i, b) in problem.tensors().iter().enumerate() {
        let mut mats = Vec::with_capacity(b.order());
        for (d, &n) in b.data.shape().iter().enumerate() {
            let m = match method {
                InitMethod::Svd => {
                    let mut unfoldings = Vec::new();
                    match problem.coupling_in_mode(d) {
                        Some((_, spec)) if spec.participant(i).is_some() => {
                            for p in spec.participants() {
                                unfoldings.push(unfold(&problem.tensor(p.tensor).data, d)?);
                            }
                        }
                        _ => unfoldings.push(unfold(&b.data, d)?),
                    }
                    leading_singular_vectors(&unfoldings, b.rank, rng)
                }
                InitMethod::RandomNormal => normal(rng, n, b.rank),
                InitMethod::RandomUniform => uniform(rng, n, b.rank),
                InitMethod::Random if b.is_nonnegative(d) => uniform(rng, n, b.rank),
                InitMethod::Random => normal(rng, n, b.rank),
            };
            mats.push(m);
        }
        factors.push(KruskalFactors::new(mats)?);
    }

    let mut splits = Vec::with_capacity(factors.len());
    for (b, k) in problem.tensors().iter().zip(&factors) {
        let mut per_mode = Vec::with_capacity(b.order());
        for (d, reg) in b.regularizers.iter().enumerate() {
            if reg.is_none() {
                per_mode.push(None);
                continue;
            }
            let c = k.factor(d);
            let z = ProxOperator::new(reg.clone()).apply(c, S::one())?;
            let dual = normal(rng, c.nrows(), c.ncols());
            per_mode.push(Some(SplitState { z, dual }));
        }
        splits.push(per_mode);
    }

    let mut consensus = Vec::with_capacity(problem.couplings().len());
    for spec in problem.couplings() {
        let (nd, rd) = spec.delta_shape();
        let delta = normal(rng, nd, rd);
        let duals = spec
            .participants()
            .iter()
            .map(|p| {
                let (n, r) = factors[p.tensor].factor(spec.mode()).shape();
                let (rows, cols) = p.transform.factor_side_shape(n, r)?;
                Ok(normal(rng, rows, cols))
            })
            .collect::<Result<Vec<_>>>()?;
        consensus.push(ConsensusState { delta, duals });
    }

    Ok(SolverState { factors, splits, consensus })
}
