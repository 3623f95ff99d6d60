//! Limited-memory quasi-Newton minimization under simple bounds.
//!
//! Directions come from the two-loop recursion restricted to the free
//! variables (those not held at an active bound), followed by a projected
//! backtracking line search with an Armijo condition. Every accepted step
//! strictly decreases the objective.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsbOptions {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iters: usize,
    /// Cap on objective evaluations, line-search trials included.
    pub max_evaluations: usize,
    /// Stop when the infinity norm of the projected gradient falls below this.
    pub pgtol: f64,
    /// Stop when the relative objective reduction of a step falls below this.
    pub ftol: f64,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        Self {
            memory: 5,
            max_iters: 100,
            max_evaluations: 5000,
            pgtol: 1e-10,
            ftol: 1e-10,
        }
    }
}

impl LbfgsbOptions {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 || self.max_iters == 0 || self.max_evaluations == 0 {
            return Err(Error::param("subsolver memory and max_iters must be positive"));
        }
        if !(self.pgtol >= 0.0 && self.ftol >= 0.0) {
            return Err(Error::param("subsolver tolerances must be nonnegative"));
        }
        Ok(())
    }
}

/// Elementwise bounds shared by all variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds<S> {
    pub lower: Option<S>,
    pub upper: Option<S>,
}

impl<S: Scalar> Bounds<S> {
    pub fn none() -> Self {
        Self { lower: None, upper: None }
    }

    pub fn nonnegative() -> Self {
        Self { lower: Some(S::zero()), upper: None }
    }

    fn project(&self, v: S) -> S {
        let v = self.lower.map_or(v, |l| v.max(l));
        self.upper.map_or(v, |u| v.min(u))
    }

    /// Whether the variable sits at a bound that the gradient pushes against.
    fn is_blocked(&self, v: S, g: S) -> bool {
        self.lower.is_some_and(|l| v <= l && g > S::zero())
            || self.upper.is_some_and(|u| v >= u && g < S::zero())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsbStatus {
    ProjectedGradient,
    RelativeReduction,
    MaxIterations,
    MaxEvaluations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsbReport<S> {
    pub status: LbfgsbStatus,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective at the projected start followed by every accepted iterate.
    pub objective_trace: Vec<S>,
}

impl<S: Scalar> LbfgsbReport<S> {
    pub fn initial_objective(&self) -> S {
        self.objective_trace[0]
    }

    pub fn final_objective(&self) -> S {
        *self.objective_trace.last().expect("trace holds the start value")
    }
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

fn inf_norm<S: Scalar>(a: impl Iterator<Item = S>) -> S {
    a.fold(S::zero(), |m, v| m.max(v.abs()))
}

/// Minimizes `f` over the box starting from `x` (projected first), leaving
/// the best point found in `x`.
///
/// `eval(x, grad)` returns the objective and writes the gradient.
pub fn minimize_bounded<S, F>(
    x: &mut [S],
    bounds: Bounds<S>,
    opts: &LbfgsbOptions,
    mut eval: F,
) -> Result<LbfgsbReport<S>>
where
    S: Scalar,
    F: FnMut(&[S], &mut [S]) -> Result<S>,
{
    opts.validate()?;
    let n = x.len();
    for v in x.iter_mut() {
        *v = bounds.project(*v);
    }
    let mut g = vec![S::zero(); n];
    let mut f = eval(x, &mut g)?;
    let mut evaluations = 1;
    if !f.is_finite_value() {
        return Err(Error::NonFinite {
            iteration: 0,
            what: "subproblem objective at start".into(),
        });
    }
    let mut trace = vec![f];

    let mut memory: VecDeque<(Vec<S>, Vec<S>, S)> = VecDeque::with_capacity(opts.memory);
    let mut d = vec![S::zero(); n];
    let mut x_new = vec![S::zero(); n];
    let mut g_new = vec![S::zero(); n];
    let mut alpha_buf = vec![S::zero(); opts.memory];
    let pgtol = S::lit(opts.pgtol);
    let ftol = S::lit(opts.ftol);
    let armijo = S::lit(1e-4);
    let eps = S::lit(f64::EPSILON);

    let mut status = LbfgsbStatus::MaxIterations;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let pg = inf_norm(x.iter().zip(&g).map(|(&xi, &gi)| bounds.project(xi - gi) - xi));
        if pg <= pgtol {
            status = LbfgsbStatus::ProjectedGradient;
            break;
        }

        // Two-loop recursion on the free subspace.
        let free: Vec<bool> = x.iter().zip(&g).map(|(&xi, &gi)| !bounds.is_blocked(xi, gi)).collect();
        for i in 0..n {
            d[i] = if free[i] { -g[i] } else { S::zero() };
        }
        for (k, (s, y, rho)) in memory.iter().enumerate().rev() {
            let a = *rho * dot(s, &d);
            alpha_buf[k] = a;
            for i in 0..n {
                if free[i] {
                    d[i] -= a * y[i];
                }
            }
        }
        if let Some((s, y, _)) = memory.back() {
            let gamma = dot(s, y) / dot(y, y);
            for v in d.iter_mut() {
                *v *= gamma;
            }
        }
        for (k, (s, y, rho)) in memory.iter().enumerate() {
            let b = *rho * dot(y, &d);
            let a = alpha_buf[k];
            for i in 0..n {
                if free[i] {
                    d[i] += (a - b) * s[i];
                }
            }
        }
        if !(dot(&g, &d) < S::zero()) {
            memory.clear();
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { S::zero() };
            }
        }

        // Projected backtracking line search.
        let mut step = if memory.is_empty() {
            (S::one() / inf_norm(d.iter().copied())).min(S::one())
        } else {
            S::one()
        };
        let mut accepted = None;
        for _ in 0..60 {
            if evaluations >= opts.max_evaluations {
                break;
            }
            for i in 0..n {
                x_new[i] = bounds.project(x[i] + step * d[i]);
            }
            let decrease: S = g.iter().zip(x_new.iter().zip(x.iter())).fold(S::zero(), |acc, (&gi, (&a, &b))| acc + gi * (a - b));
            if !(decrease < S::zero()) {
                break;
            }
            match eval(&x_new, &mut g_new) {
                Ok(f_new) => {
                    evaluations += 1;
                    if f_new.is_finite_value() && f_new <= f + armijo * decrease && f_new < f {
                        accepted = Some(f_new);
                        break;
                    }
                }
                // Leaving the loss domain counts as a rejected step.
                Err(Error::Domain { .. }) => evaluations += 1,
                Err(e) => return Err(e),
            }
            step *= S::lit(0.5);
        }
        let Some(f_new) = accepted else {
            status = if evaluations >= opts.max_evaluations {
                LbfgsbStatus::MaxEvaluations
            } else {
                LbfgsbStatus::LineSearchFailed
            };
            break;
        };
        iterations += 1;

        let s: Vec<S> = x_new.iter().zip(x.iter()).map(|(&a, &b)| a - b).collect();
        let y: Vec<S> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > eps * dot(&y, &y) {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, S::one() / sy));
        }
        let reduction = (f - f_new) / f.abs().max(f_new.abs()).max(S::one());
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        f = f_new;
        trace.push(f);
        if reduction <= ftol {
            status = LbfgsbStatus::RelativeReduction;
            break;
        }
    }

    Ok(LbfgsbReport {
        status,
        iterations,
        evaluations,
        objective_trace: trace,
    })
}
