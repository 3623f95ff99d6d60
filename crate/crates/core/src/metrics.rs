//! Factor match score and run classification.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::KruskalFactors;

/// Score of a set of estimated models against the true ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmsReport {
    pub fms: f64,
    pub per_tensor: Vec<f64>,
    /// `permutations[i][r]` is the true component matched to estimated
    /// component `r` of tensor `i`.
    pub permutations: Vec<Vec<usize>>,
    pub threshold: f64,
    pub passed: bool,
}

/// `0.99^(Σ D_i)`.
pub fn failure_threshold(orders: impl IntoIterator<Item = usize>) -> f64 {
    let total: usize = orders.into_iter().sum();
    0.99f64.powi(total as i32)
}

/// A run fails when it hits the iteration cap or scores below the threshold.
pub fn is_failed_run(fms: f64, threshold: f64, hit_iteration_cap: bool) -> bool {
    hit_iteration_cap || !(fms >= threshold)
}

fn abs_cosine<S: Scalar>(a: &DVector<S>, b: &DVector<S>) -> f64 {
    let (na, nb) = (a.norm().to_f64_lossy(), b.norm().to_f64_lossy());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b).to_f64_lossy() / (na * nb)).abs()
}

/// `S(r, s) = Π_d |cos(C_d(:, r), C_d^true(:, s))|`.
pub fn congruence_matrix<S: Scalar>(est: &KruskalFactors<S>, truth: &KruskalFactors<S>) -> Result<DMatrix<f64>> {
    if est.rank() != truth.rank() || est.shape() != truth.shape() {
        return Err(Error::shape(format!(
            "estimate {:?} rank {} vs truth {:?} rank {}",
            est.shape(),
            est.rank(),
            truth.shape(),
            truth.rank()
        )));
    }
    let r = est.rank();
    let mut s = DMatrix::from_element(r, r, 1.0);
    for (e, t) in est.factors().iter().zip(truth.factors()) {
        let ecols: Vec<DVector<S>> = e.column_iter().map(|c| c.into_owned()).collect();
        let tcols: Vec<DVector<S>> = t.column_iter().map(|c| c.into_owned()).collect();
        for a in 0..r {
            for b in 0..r {
                s[(a, b)] *= abs_cosine(&ecols[a], &tcols[b]);
            }
        }
    }
    Ok(s)
}

/// Assignment maximizing `Σ_r score[(r, perm[r])]` for a square matrix
/// (shortest augmenting paths with potentials, O(n³)).
pub fn max_weight_assignment(score: &DMatrix<f64>) -> Vec<usize> {
    let n = score.nrows();
    assert_eq!(n, score.ncols(), "assignment needs a square matrix");
    // Minimize cost = −score; rows and columns are 1-based inside, 0 is a sentinel.
    let cost = |i: usize, j: usize| -score[(i - 1, j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    perm
}

/// Product over tensors of the mean matched congruence, with absolute
/// cosines so that sign flips of components do not count against a model.
pub fn factor_match_score<S: Scalar>(est: &[KruskalFactors<S>], truth: &[KruskalFactors<S>]) -> Result<FmsReport> {
    if est.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} estimated models vs {} true models",
            est.len(),
            truth.len()
        )));
    }
    let mut per_tensor = Vec::with_capacity(est.len());
    let mut permutations = Vec::with_capacity(est.len());
    for (e, t) in est.iter().zip(truth) {
        let s = congruence_matrix(e, t)?;
        let perm = max_weight_assignment(&s);
        let mean = perm.iter().enumerate().map(|(r, &c)| s[(r, c)]).sum::<f64>() / perm.len() as f64;
        per_tensor.push(mean);
        permutations.push(perm);
    }
    let fms = per_tensor.iter().product();
    let threshold = failure_threshold(truth.iter().map(KruskalFactors::order));
    Ok(FmsReport {
        fms,
        per_tensor,
        permutations,
        threshold,
        passed: fms >= threshold,
    })
}

/// Checks that components tied to the same consensus column are matched
/// consistently across tensors. `selections[i][r]` is the consensus column
/// behind component `r` of tensor `i`; the estimated and true models use the
/// same selections.
pub fn shared_components_consistent(report: &FmsReport, selections: &[Vec<usize>]) -> bool {
    let mut mapping: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for (perm, sel) in report.permutations.iter().zip(selections) {
        for (r, &t) in perm.iter().enumerate() {
            let (from, to) = (sel[r], sel[t]);
            if *mapping.entry(from).or_insert(to) != to {
                return false;
            }
        }
    }
    true
}
