//! Scalar abstraction shared by the fitting and estimation code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable throughout the numerical core.
///
/// Implemented for `f32` and `f64`. Everything that touches random number
/// generation or distribution quantiles works in `f64` and converts at the
/// boundary with [`Scalar::lit`] / [`Scalar::as_f64`].
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn expit<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Pairwise summation; the result does not depend on thread scheduling and
/// loses less precision than a running sum on long vectors.
pub fn pairwise_sum<T: Scalar>(v: &[T]) -> T {
    const LEAF: usize = 64;
    if v.len() <= LEAF {
        let mut acc = T::zero();
        for &x in v {
            acc = acc + x;
        }
        acc
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

pub fn mean<T: Scalar>(v: &[T]) -> T {
    if v.is_empty() {
        return T::nan();
    }
    pairwise_sum(v) / T::from_count(v.len())
}

/// Sample covariance with the `n - 1` divisor.
pub fn covariance<T: Scalar>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "covariance of unequal-length vectors");
    let n = a.len();
    if n < 2 {
        return T::zero();
    }
    let ma = mean(a);
    let mb = mean(b);
    let prods: Vec<T> = a.iter().zip(b).map(|(&x, &y)| (x - ma) * (y - mb)).collect();
    pairwise_sum(&prods) / T::from_count(n - 1)
}

/// Sample variance with the `n - 1` divisor.
pub fn variance<T: Scalar>(a: &[T]) -> T {
    covariance(a, a)
}
