//! Small dense solves shared by the factor and consensus updates.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor<S: Scalar> {
    chol: Cholesky<S, Dyn>,
}

impl<S: Scalar> SpdFactor<S> {
    pub fn new(a: &DMatrix<S>, what: &str) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::shape(format!("{what}: {}x{} is not square", a.nrows(), a.ncols())));
        }
        Cholesky::new(a.clone())
            .map(|chol| Self { chol })
            .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// `A⁻¹ B`.
    pub fn solve_left(&self, b: &DMatrix<S>) -> DMatrix<S> {
        self.chol.solve(b)
    }

    /// `B A⁻¹`, i.e. the `X` with `X A = B`.
    pub fn solve_right(&self, b: &DMatrix<S>) -> DMatrix<S> {
        self.chol.solve(&b.transpose()).transpose()
    }
}

/// Solves `A X + X B = C` for symmetric positive-definite `A` (n×n) and
/// symmetric positive-semidefinite `B` (r×r).
///
/// `B = V Λ Vᵀ` turns the equation into independent shifted systems
/// `(A + λ_j I) y_j = (C V)_j`, with `X = Y Vᵀ`.
#[derive(Debug, Clone)]
pub struct SylvesterSolver<S: Scalar> {
    eigvecs: DMatrix<S>,
    shifted: Vec<SpdFactor<S>>,
}

impl<S: Scalar> SylvesterSolver<S> {
    pub fn new(a: &DMatrix<S>, b: &DMatrix<S>) -> Result<Self> {
        if !a.is_square() || !b.is_square() {
            return Err(Error::shape("Sylvester coefficients must be square"));
        }
        let eig = b.clone().symmetric_eigen();
        let n = a.nrows();
        let shifted = eig
            .eigenvalues
            .iter()
            .map(|&lambda| {
                // B is PSD up to rounding; never shift A by a negative amount.
                let shift = lambda.max(S::zero());
                SpdFactor::new(&(a + DMatrix::identity(n, n) * shift), "shifted Sylvester system")
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            eigvecs: eig.eigenvectors,
            shifted,
        })
    }

    pub fn solve(&self, c: &DMatrix<S>) -> Result<DMatrix<S>> {
        if c.ncols() != self.eigvecs.nrows() || c.nrows() != self.shifted.first().map_or(0, SpdFactor::dim) {
            return Err(Error::shape(format!(
                "Sylvester right-hand side is {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        let cv = c * &self.eigvecs;
        let mut y = DMatrix::zeros(c.nrows(), c.ncols());
        for (j, f) in self.shifted.iter().enumerate() {
            let col = f.chol.solve(&cv.column(j).into_owned());
            y.set_column(j, &col);
        }
        Ok(y * self.eigvecs.transpose())
    }
}

/// Least-squares right solve `X = B A⁺` for symmetric PSD `A`, falling back
/// to the pseudo-inverse when `A` is singular.
pub fn solve_right_psd<S: Scalar>(a: &DMatrix<S>, b: &DMatrix<S>) -> DMatrix<S> {
    match Cholesky::new(a.clone()) {
        Some(ch) => ch.solve(&b.transpose()).transpose(),
        None => {
            let svd = a.clone().svd(true, true);
            let eps = S::default_epsilon() * S::lit(a.nrows() as f64) * svd.singular_values.max();
            let pinv = svd.pseudo_inverse(eps).expect("both singular bases were computed");
            b * pinv
        }
    }
}
