//! Floating point element type shared by the tensor core and the model.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of every tensor.
///
/// Everything numeric in the crate is written against this trait. `f64` is
/// the working precision; `f32` is supported for memory-bound experiments.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// `c <- alpha * a @ b + beta * c` over strided row/column layouts.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`. Strides are in elements,
    /// which lets callers pass transposed views without copying.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        for i in 0..m {
            for j in 0..n {
                let mut acc = Self::zero();
                for p in 0..k {
                    let av = a[(i as isize * rsa + p as isize * csa) as usize];
                    let bv = b[(p as isize * rsb + j as isize * csb) as usize];
                    acc = acc + av * bv;
                }
                let ci = (i as isize * rsc + j as isize * csc) as usize;
                c[ci] = if beta == Self::zero() {
                    alpha * acc
                } else {
                    alpha * acc + beta * c[ci]
                };
            }
        }
    }

    /// Lossless-where-possible conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

macro_rules! impl_blas_scalar {
    ($t:ty, $kernel:ident) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                // SAFETY: the callers in this crate pass dense buffers whose
                // extents cover every strided index, checked by the assert above.
                unsafe {
                    matrixmultiply::$kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_blas_scalar!(f64, dgemm);
impl_blas_scalar!(f32, sgemm);
