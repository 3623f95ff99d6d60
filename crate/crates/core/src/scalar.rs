use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the factorization code is generic over.
///
/// Everything numeric in this crate is written against this trait so the
/// same kernels run in `f32` or `f64`; the experiment harness and all
/// reported tolerances use `f64`.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn is_finite_value(self) -> bool {
        self.to_f64_lossy().is_finite()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
