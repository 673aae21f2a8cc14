//! Floating-point element type shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use num_traits::{Float, FromPrimitive, NumAssign};
use twofloat::TwoFloat;

/// A real scalar usable as a matrix element.
///
/// Implemented for `f32`, `f64` and the double-double [`TwoFloat`]
/// (about 106 significand bits). `f64` is the working precision, `f32` is
/// there for benchmarking, and `TwoFloat` evaluates finite-difference
/// objectives with rounding far below the differences being measured.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Default + Debug + Display + Send + Sync + 'static
{
    /// Short type name used in manifests and CSV headers.
    const NAME: &'static str;

    /// `c = alpha * a * b + beta * c` over strided views.
    ///
    /// # Safety
    /// Every index reachable through the given dimensions and strides must lie
    /// inside the corresponding buffer, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    /// Converts an `f64`; `None` if the type cannot represent it.
    fn try_lit(v: f64) -> Option<Self> {
        Self::from_f64(v)
    }

    /// Converts an `f64` literal, panicking only on types that cannot represent it.
    fn lit(v: f64) -> Self {
        Self::try_lit(v).expect("scalar literal out of range")
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Left-to-right sum; `T::zero()` for an empty iterator.
pub fn sum<T: Scalar>(items: impl IntoIterator<Item = T>) -> T {
    items.into_iter().fold(T::zero(), |acc, v| acc + v)
}

/// Triple-loop `c = alpha * a * b + beta * c` with one accumulator per entry.
///
/// # Safety
/// Same contract as [`Scalar::gemm`].
#[allow(clippy::too_many_arguments)]
pub unsafe fn gemm_loop<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: *const T,
    rsa: isize,
    csa: isize,
    b: *const T,
    rsb: isize,
    csb: isize,
    beta: T,
    c: *mut T,
    rsc: isize,
    csc: isize,
) {
    for i in 0..m as isize {
        for j in 0..n as isize {
            let mut acc = T::zero();
            for t in 0..k as isize {
                acc += *a.offset(i * rsa + t * csa) * *b.offset(t * rsb + j * csb);
            }
            let out = c.offset(i * rsc + j * csc);
            *out = if beta == T::zero() { alpha * acc } else { alpha * acc + beta * *out };
        }
    }
}

impl Scalar for TwoFloat {
    const NAME: &'static str = "f64x2";

    // The num-traits default goes through `i64` and truncates.
    fn try_lit(v: f64) -> Option<Self> {
        Some(TwoFloat::from(v))
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: TwoFloat,
        a: *const TwoFloat,
        rsa: isize,
        csa: isize,
        b: *const TwoFloat,
        rsb: isize,
        csb: isize,
        beta: TwoFloat,
        c: *mut TwoFloat,
        rsc: isize,
        csc: isize,
    ) {
        gemm_loop(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}
