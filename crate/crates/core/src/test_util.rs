//! Shared helpers for unit tests.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{DenseTensor, KruskalFactors};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `BᵀB + shift·I` for a random square `B`.
pub fn random_spd(rng: &mut impl Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let b = random_matrix(rng, n, n);
    b.tr_mul(&b) + DMatrix::identity(n, n) * shift
}

pub fn random_model(rng: &mut impl Rng, shape: &[usize], rank: usize) -> KruskalFactors<f64> {
    KruskalFactors::new(shape.iter().map(|&n| random_matrix(rng, n, rank)).collect()).unwrap()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> DenseTensor<f64> {
    let n = shape.iter().product();
    DenseTensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

#[track_caller]
pub fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let diff = (a - b).amax();
    assert!(diff <= tol, "max abs difference {diff:e} exceeds {tol:e}");
}
