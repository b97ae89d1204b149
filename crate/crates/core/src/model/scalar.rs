use std::fmt::Debug;

use num_traits::Float;

/// Floating-point element type. Training runs in `f32`; gradient checks
/// run the same code in `f64`.
pub trait Scalar: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `C = alpha * A B + beta * C` on strided views.
    /// Strides are `(row, column)` in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        sa: (usize, usize),
        b: &[Self],
        sb: (usize, usize),
        beta: Self,
        c: &mut [Self],
        sc: (usize, usize),
    );
}

fn extent(rows: usize, cols: usize, s: (usize, usize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * s.0 + (cols - 1) * s.1 + 1
    }
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                sa: (usize, usize),
                b: &[Self],
                sb: (usize, usize),
                beta: Self,
                c: &mut [Self],
                sc: (usize, usize),
            ) {
                assert!(a.len() >= extent(m, k, sa), "gemm: A too short");
                assert!(b.len() >= extent(k, n, sb), "gemm: B too short");
                assert!(c.len() >= extent(m, n, sc), "gemm: C too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the assertions above bound every accessed element.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        sa.0 as isize,
                        sa.1 as isize,
                        b.as_ptr(),
                        sb.0 as isize,
                        sb.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        sc.0 as isize,
                        sc.1 as isize,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Row-major `C (m×n) = A (m×k) · B (k×n)`, overwriting `C` when
/// `accumulate` is false.
pub(crate) fn matmul<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S], accumulate: bool) {
    let beta = if accumulate { S::one() } else { S::zero() };
    S::gemm(m, k, n, S::one(), a, (k, 1), b, (n, 1), beta, c, (n, 1));
}

/// `C (m×n) = A (m×k) · Bᵀ` where `B` is stored row-major as `n×k`.
pub(crate) fn matmul_bt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S], accumulate: bool) {
    let beta = if accumulate { S::one() } else { S::zero() };
    S::gemm(m, k, n, S::one(), a, (k, 1), b, (1, k), beta, c, (n, 1));
}

/// `C (m×n) = Aᵀ · B` where `A` is stored row-major as `k×m` and `B` as `k×n`.
pub(crate) fn matmul_at<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S], accumulate: bool) {
    let beta = if accumulate { S::one() } else { S::zero() };
    S::gemm(m, k, n, S::one(), a, (1, m), b, (n, 1), beta, c, (n, 1));
}
