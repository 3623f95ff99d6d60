use nalgebra::{DMatrix, DMatrixView};

use super::{DenseTensor, KruskalFactors};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Splits the shape around `mode` into (product of lower dims, product of higher dims).
fn split_dims(shape: &[usize], mode: usize) -> (usize, usize) {
    let left = shape[..mode].iter().product();
    let right = shape[mode + 1..].iter().product();
    (left, right)
}

/// Mode-`mode` unfolding: rows index `mode`, columns run over the remaining
/// modes with the lowest mode fastest.
pub fn unfold<S: Scalar>(t: &DenseTensor<S>, mode: usize) -> Result<DMatrix<S>> {
    t.check_mode(mode)?;
    let shape = t.shape();
    let n = shape[mode];
    let (left, right) = split_dims(shape, mode);
    let vals = t.values();
    if mode == 0 {
        return Ok(DMatrix::from_column_slice(n, left * right, vals));
    }
    let mut out = DMatrix::zeros(n, left * right);
    for b in 0..right {
        for i in 0..n {
            let src = left * (i + n * b);
            for a in 0..left {
                out[(i, a + left * b)] = vals[src + a];
            }
        }
    }
    Ok(out)
}

/// Inverse of [`unfold`].
pub fn refold<S: Scalar>(m: &DMatrix<S>, mode: usize, shape: &[usize]) -> Result<DenseTensor<S>> {
    if mode >= shape.len() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: shape.len(),
        });
    }
    let n = shape[mode];
    let (left, right) = split_dims(shape, mode);
    if m.nrows() != n || m.ncols() != left * right {
        return Err(Error::shape(format!(
            "cannot refold {}x{} matrix into {shape:?} along mode {mode}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut vals = vec![S::zero(); n * left * right];
    for b in 0..right {
        for i in 0..n {
            let dst = left * (i + n * b);
            for a in 0..left {
                vals[dst + a] = m[(i, a + left * b)];
            }
        }
    }
    DenseTensor::new(shape.to_vec(), vals)
}

/// Column-wise Kronecker product.
pub fn khatri_rao<S: Scalar>(a: &DMatrix<S>, b: &DMatrix<S>) -> Result<DMatrix<S>> {
    if a.ncols() != b.ncols() {
        return Err(Error::shape(format!(
            "Khatri-Rao operands have {} and {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    let (m, k) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(m * k, a.ncols());
    for j in 0..a.ncols() {
        for i in 0..m {
            let aij = a[(i, j)];
            for l in 0..k {
                out[(i * k + l, j)] = aij * b[(l, j)];
            }
        }
    }
    Ok(out)
}

/// Khatri-Rao product of the factors in `modes`, highest listed mode first,
/// so the lowest mode's row index varies fastest. An empty list gives a
/// single row of ones.
fn khatri_rao_range<S: Scalar>(k: &KruskalFactors<S>, modes: impl Iterator<Item = usize>) -> DMatrix<S> {
    let mut acc = DMatrix::from_element(1, k.rank(), S::one());
    // acc holds the product of the modes seen so far; prepending a higher
    // mode means acc becomes C_high ⊙ acc.
    for d in modes {
        acc = khatri_rao(k.factor(d), &acc).expect("factors share the rank");
    }
    acc
}

/// `M_d = C_D ⊙ … ⊙ C_{d+1} ⊙ C_{d-1} ⊙ … ⊙ C_1`.
pub fn co_khatri_rao<S: Scalar>(k: &KruskalFactors<S>, skip_mode: usize) -> Result<DMatrix<S>> {
    k.check_mode(skip_mode)?;
    Ok(khatri_rao_range(
        k,
        (0..k.order()).filter(|&d| d != skip_mode),
    ))
}

fn check_model_fits<S: Scalar>(t: &DenseTensor<S>, k: &KruskalFactors<S>) -> Result<()> {
    if t.shape() != k.shape().as_slice() {
        return Err(Error::shape(format!(
            "tensor {:?} vs model {:?}",
            t.shape(),
            k.shape()
        )));
    }
    Ok(())
}

/// Matricized tensor times Khatri-Rao product, `T_[d] · M_d`, computed
/// without forming `M_d`.
pub fn mttkrp<S: Scalar>(t: &DenseTensor<S>, k: &KruskalFactors<S>, mode: usize) -> Result<DMatrix<S>> {
    t.check_mode(mode)?;
    check_model_fits(t, k)?;
    let shape = t.shape();
    let n = shape[mode];
    let rank = k.rank();
    let (left, right) = split_dims(shape, mode);
    let lower = khatri_rao_range(k, 0..mode);
    let upper = khatri_rao_range(k, mode + 1..k.order());
    let vals = t.values();
    if mode == 0 {
        return Ok(DMatrix::from_column_slice(n, right, vals) * upper);
    }
    let slab = |b: usize| DMatrixView::from_slice(&vals[left * n * b..left * n * (b + 1)], left, n);
    if mode + 1 == k.order() {
        return Ok(slab(0).tr_mul(&lower));
    }
    let mut out = DMatrix::zeros(n, rank);
    let mut scaled = lower.clone();
    for b in 0..right {
        for r in 0..rank {
            scaled.column_mut(r).copy_from(&(lower.column(r) * upper[(b, r)]));
        }
        out.gemm_tr(S::one(), &slab(b), &scaled, S::one());
    }
    Ok(out)
}

/// Reference MTTKRP: unfold, then multiply by the explicit co-Khatri-Rao.
pub fn mttkrp_naive<S: Scalar>(t: &DenseTensor<S>, k: &KruskalFactors<S>, mode: usize) -> Result<DMatrix<S>> {
    check_model_fits(t, k)?;
    Ok(unfold(t, mode)? * co_khatri_rao(k, mode)?)
}

/// Hadamard product of `C_dᵀ C_d` over every mode except `skip_mode`,
/// which equals `M_dᵀ M_d`.
pub fn gram_hadamard<S: Scalar>(k: &KruskalFactors<S>, skip_mode: usize) -> Result<DMatrix<S>> {
    k.check_mode(skip_mode)?;
    let r = k.rank();
    let mut out = DMatrix::from_element(r, r, S::one());
    for (d, f) in k.factors().iter().enumerate() {
        if d != skip_mode {
            out.component_mul_assign(&f.tr_mul(f));
        }
    }
    Ok(out)
}

/// Full tensor of a CP model.
pub fn reconstruct<S: Scalar>(k: &KruskalFactors<S>, shape: &[usize]) -> Result<DenseTensor<S>> {
    if shape != k.shape().as_slice() {
        return Err(Error::shape(format!(
            "model rows {:?} do not match shape {shape:?}",
            k.shape()
        )));
    }
    let m = co_khatri_rao(k, 0)?;
    let unfolded = k.factor(0) * m.transpose();
    DenseTensor::new(shape.to_vec(), unfolded.as_slice().to_vec())
}
