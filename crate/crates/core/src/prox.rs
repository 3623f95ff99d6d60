//! Proximal operators of the regularizers a factor matrix can carry.
//!
//! `prox_{λg}(x) = argmin_u g(u) + ‖x − u‖² / (2λ)`, where `λ = 1/ρ` is the
//! step scale handed in by the ADMM loop. Elementwise regularizers act on
//! every entry; the others act on each column of the matrix independently.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::scalar::Scalar;

/// Tolerance used when deciding whether a point lies in a constraint set.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// A regularizer `g` and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regularizer {
    #[default]
    None,
    NonNegative,
    Box {
        lower: f64,
        upper: f64,
    },
    /// Each column on the probability simplex.
    Simplex,
    /// Each column nondecreasing.
    Monotone,
    /// Each column inside the ℓ1 ball of the given radius.
    L1Ball {
        radius: f64,
    },
    /// Each column inside the Euclidean unit ball.
    L2UnitBall,
    /// `γ‖x‖₁`.
    Lasso {
        gamma: f64,
    },
    /// `γ‖x‖₂` per column.
    L2Norm {
        gamma: f64,
    },
    /// `γ‖D x‖₂²` per column, `D` the forward-difference matrix of the
    /// given order.
    Smoothness {
        gamma: f64,
        #[serde(default = "default_difference_order")]
        order: usize,
    },
    /// Unit-norm columns with at most `k` nonzeros (non-convex).
    NormalizedHardSparsity {
        k: usize,
    },
}

fn default_difference_order() -> usize {
    1
}

/// Whether a regularizer acts entrywise or on whole columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxAxis {
    Elementwise,
    PerColumn,
}

impl Regularizer {
    pub fn is_none(&self) -> bool {
        matches!(self, Regularizer::None)
    }

    pub fn axis(&self) -> ProxAxis {
        match self {
            Regularizer::None
            | Regularizer::NonNegative
            | Regularizer::Box { .. }
            | Regularizer::Lasso { .. } => ProxAxis::Elementwise,
            _ => ProxAxis::PerColumn,
        }
    }

    /// Indicator functions of sets (value 0 or +∞).
    pub fn is_indicator(&self) -> bool {
        matches!(
            self,
            Regularizer::NonNegative
                | Regularizer::Box { .. }
                | Regularizer::Simplex
                | Regularizer::Monotone
                | Regularizer::L1Ball { .. }
                | Regularizer::L2UnitBall
                | Regularizer::NormalizedHardSparsity { .. }
        )
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self, Regularizer::NormalizedHardSparsity { .. })
    }

    /// Checks parameters; `column_len` is the number of rows of the factor
    /// the regularizer will be applied to, when known.
    pub fn validate(&self, column_len: Option<usize>) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match *self {
            Regularizer::Box { lower, upper } => {
                if !(lower <= upper) {
                    return Err(Error::param(format!("box lower {lower} exceeds upper {upper}")));
                }
            }
            Regularizer::L1Ball { radius } => positive("l1 ball radius", radius)?,
            Regularizer::Lasso { gamma } | Regularizer::L2Norm { gamma } => positive("gamma", gamma)?,
            Regularizer::Smoothness { gamma, order } => {
                positive("gamma", gamma)?;
                if order == 0 {
                    return Err(Error::param("difference order must be at least 1"));
                }
                if let Some(n) = column_len {
                    if order >= n {
                        return Err(Error::param(format!(
                            "difference order {order} needs columns longer than {n}"
                        )));
                    }
                }
            }
            Regularizer::NormalizedHardSparsity { k } => {
                if k == 0 {
                    return Err(Error::param("sparsity level k must be at least 1"));
                }
                if let Some(n) = column_len {
                    if k > n {
                        return Err(Error::param(format!("sparsity level {k} exceeds column length {n}")));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Value of `g` at `x`; indicators give 0 on the set (within
    /// [`FEASIBILITY_TOL`]) and +∞ elsewhere.
    pub fn evaluate<S: Scalar>(&self, x: &DMatrix<S>) -> S {
        let tol = S::lit(FEASIBILITY_TOL);
        let indicator = |ok: bool| if ok { S::zero() } else { S::lit(f64::INFINITY) };
        match *self {
            Regularizer::None => S::zero(),
            Regularizer::NonNegative => indicator(x.iter().all(|&v| v >= -tol)),
            Regularizer::Box { lower, upper } => {
                let (l, u) = (S::lit(lower), S::lit(upper));
                indicator(x.iter().all(|&v| v >= l - tol && v <= u + tol))
            }
            Regularizer::Simplex => indicator(x.column_iter().all(|c| {
                c.iter().all(|&v| v >= -tol) && (c.sum() - S::one()).abs() <= tol
            })),
            Regularizer::Monotone => indicator(x.column_iter().all(|c| {
                c.iter().zip(c.iter().skip(1)).all(|(&a, &b)| b >= a - tol)
            })),
            Regularizer::L1Ball { radius } => {
                let r = S::lit(radius);
                indicator(x.column_iter().all(|c| c.lp_norm(1) <= r + tol))
            }
            Regularizer::L2UnitBall => indicator(x.column_iter().all(|c| c.norm() <= S::one() + tol)),
            Regularizer::Lasso { gamma } => S::lit(gamma) * x.iter().fold(S::zero(), |a, &v| a + v.abs()),
            Regularizer::L2Norm { gamma } => {
                S::lit(gamma) * x.column_iter().fold(S::zero(), |a, c| a + c.norm())
            }
            Regularizer::Smoothness { gamma, order } => {
                let d = difference_matrix::<S>(x.nrows(), order);
                S::lit(gamma) * (d * x).norm_squared()
            }
            Regularizer::NormalizedHardSparsity { k } => indicator(x.column_iter().all(|c| {
                (c.norm() - S::one()).abs() <= tol && c.iter().filter(|v| !v.is_zero()).count() <= k
            })),
        }
    }
}

/// Forward-difference matrix of the given order, `(n − order) × n`.
pub fn difference_matrix<S: Scalar>(n: usize, order: usize) -> DMatrix<S> {
    let mut d = DMatrix::<S>::identity(n, n);
    for k in 0..order {
        let rows = n - k - 1;
        let mut next = DMatrix::zeros(rows, n);
        for i in 0..rows {
            let diff = d.row(i + 1) - d.row(i);
            next.set_row(i, &diff);
        }
        d = next;
    }
    d
}

/// A regularizer bundled with a cache of the smoothness factorizations it
/// needs. Safe to share between threads.
type SmoothnessCache<S> = RwLock<HashMap<(usize, u64), Arc<SpdFactor<S>>>>;

#[derive(Debug)]
pub struct ProxOperator<S: Scalar> {
    spec: Regularizer,
    smoothness: SmoothnessCache<S>,
}

impl<S: Scalar> Clone for ProxOperator<S> {
    fn clone(&self) -> Self {
        Self::new(self.spec.clone())
    }
}

impl<S: Scalar> ProxOperator<S> {
    pub fn new(spec: Regularizer) -> Self {
        Self {
            spec,
            smoothness: RwLock::new(HashMap::new()),
        }
    }

    pub fn spec(&self) -> &Regularizer {
        &self.spec
    }

    /// `prox_{step·g}(x)`.
    pub fn apply(&self, x: &DMatrix<S>, step: S) -> Result<DMatrix<S>> {
        if !(step > S::zero()) {
            return Err(Error::param("prox step scale must be positive"));
        }
        self.spec.validate(Some(x.nrows()))?;
        if x.nrows() == 0 && matches!(self.spec, Regularizer::Simplex) {
            return Err(Error::param("simplex projection of an empty column"));
        }
        let mut out = x.clone();
        match self.spec {
            Regularizer::None => {}
            Regularizer::NonNegative => out.apply(|v| *v = v.max(S::zero())),
            Regularizer::Box { lower, upper } => {
                let (l, u) = (S::lit(lower), S::lit(upper));
                out.apply(|v| *v = v.max(l).min(u));
            }
            Regularizer::Lasso { gamma } => {
                let thr = S::lit(gamma) * step;
                out.apply(|v| *v = soft_threshold(*v, thr));
            }
            Regularizer::Smoothness { gamma, order } => {
                let f = self.smoothness_factor(x.nrows(), order, S::lit(gamma) * step)?;
                out = f.solve_left(x);
            }
            _ => {
                for mut col in out.column_iter_mut() {
                    let v = col.clone_owned();
                    col.copy_from(&self.apply_column(v, step));
                }
            }
        }
        Ok(out)
    }

    fn apply_column(&self, x: DVector<S>, step: S) -> DVector<S> {
        match self.spec {
            Regularizer::Simplex => project_simplex(&x, S::one()),
            Regularizer::Monotone => isotonic_nondecreasing(&x),
            Regularizer::L1Ball { radius } => project_l1_ball(&x, S::lit(radius)),
            Regularizer::L2UnitBall => {
                let n = x.norm();
                x / n.max(S::one())
            }
            Regularizer::L2Norm { gamma } => {
                let thr = S::lit(gamma) * step;
                let n = x.norm();
                &x * (S::one() - thr / n.max(thr))
            }
            Regularizer::NormalizedHardSparsity { k } => normalized_hard_threshold(&x, k),
            _ => unreachable!("elementwise kinds are handled on the whole matrix"),
        }
    }

    fn smoothness_factor(&self, n: usize, order: usize, weight: S) -> Result<Arc<SpdFactor<S>>> {
        let key = (n, weight.to_f64_lossy().to_bits() ^ (order as u64).rotate_left(56));
        if let Some(f) = self.smoothness.read().expect("prox cache poisoned").get(&key) {
            return Ok(Arc::clone(f));
        }
        let d = difference_matrix::<S>(n, order);
        let system = d.tr_mul(&d) * (S::lit(2.0) * weight) + DMatrix::identity(n, n);
        let f = Arc::new(SpdFactor::new(&system, "smoothness system")?);
        self.smoothness
            .write()
            .expect("prox cache poisoned")
            .entry(key)
            .or_insert_with(|| Arc::clone(&f));
        Ok(f)
    }
}

/// Convenience wrapper without a persistent cache.
pub fn apply_prox<S: Scalar>(spec: &Regularizer, x: &DMatrix<S>, step: S) -> Result<DMatrix<S>> {
    ProxOperator::new(spec.clone()).apply(x, step)
}

pub fn soft_threshold<S: Scalar>(v: S, thr: S) -> S {
    let m = v.abs() - thr;
    if m > S::zero() {
        m * v.signum()
    } else {
        S::zero()
    }
}

/// Threshold `λ` such that `Σ max(uᵢ − λ, 0) = total` for `u` sorted
/// in descending order.
fn simplex_threshold<S: Scalar>(sorted_desc: &[S], total: S) -> S {
    let mut cumsum = S::zero();
    let mut lambda = S::zero();
    for (j, &u) in sorted_desc.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - total) / S::lit((j + 1) as f64);
        if u - candidate > S::zero() {
            lambda = candidate;
        }
    }
    lambda
}

fn sorted_desc<S: Scalar>(values: impl Iterator<Item = S>) -> Vec<S> {
    let mut u: Vec<S> = values.collect();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    u
}

/// Euclidean projection onto `{u ≥ 0, Σu = total}`.
pub fn project_simplex<S: Scalar>(x: &DVector<S>, total: S) -> DVector<S> {
    let lambda = simplex_threshold(&sorted_desc(x.iter().copied()), total);
    x.map(|v| (v - lambda).max(S::zero()))
}

/// Euclidean projection onto `{‖u‖₁ ≤ radius}`.
pub fn project_l1_ball<S: Scalar>(x: &DVector<S>, radius: S) -> DVector<S> {
    if x.lp_norm(1) <= radius {
        return x.clone();
    }
    let lambda = simplex_threshold(&sorted_desc(x.iter().map(|v| v.abs())), radius);
    x.map(|v| soft_threshold(v, lambda))
}

/// Least-squares nondecreasing fit by pool-adjacent-violators.
pub fn isotonic_nondecreasing<S: Scalar>(x: &DVector<S>) -> DVector<S> {
    // Blocks of (sum, count).
    let mut blocks: Vec<(S, usize)> = Vec::with_capacity(x.len());
    for &v in x.iter() {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            // mean0 > mean1, compared without division
            if s0 * S::lit(n1 as f64) > s1 * S::lit(n0 as f64) {
                blocks.pop();
                *blocks.last_mut().expect("two blocks") = (s0 + s1, n0 + n1);
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(x.len());
    for (s, n) in blocks {
        let mean = s / S::lit(n as f64);
        out.extend(std::iter::repeat_n(mean, n));
    }
    DVector::from_vec(out)
}

/// Keeps the `k` largest-magnitude entries (lowest index wins ties) and
/// scales to unit norm; the zero vector maps to `e_1`.
pub fn normalized_hard_threshold<S: Scalar>(x: &DVector<S>, k: usize) -> DVector<S> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        x[b].abs()
            .partial_cmp(&x[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut out = DVector::zeros(x.len());
    for &i in idx.iter().take(k) {
        out[i] = x[i];
    }
    let n = out.norm();
    if n > S::zero() {
        out / n
    } else {
        let mut e = DVector::zeros(x.len());
        e[0] = S::one();
        e
    }
}
