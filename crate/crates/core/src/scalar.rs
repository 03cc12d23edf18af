//! Floating point element types.
//!
//! Everything numeric is generic over [`Scalar`], which is implemented for
//! `f32` (training) and `f64` (gradient verification).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Row/column strides of a matrix view, in elements.
#[derive(Clone, Copy, Debug)]
pub struct Strides {
    pub row: isize,
    pub col: isize,
}

impl Strides {
    pub const fn row_major(cols: usize) -> Self {
        Strides {
            row: cols as isize,
            col: 1,
        }
    }

    /// Transposed view of a row-major `rows x cols` buffer.
    pub const fn transposed(cols: usize) -> Self {
        Strides {
            row: 1,
            col: cols as isize,
        }
    }
}

pub trait Scalar:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Copy
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + PartialOrd
    + 'static
{
    /// Width of one element in the checkpoint encoding.
    const BYTES: usize;
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// `c = alpha * a @ b + beta * c` over strided views, `a: m x k`, `b: k x n`.
    ///
    /// Slices must cover every element addressed by the strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        sa: Strides,
        b: &[Self],
        sb: Strides,
        beta: Self,
        c: &mut [Self],
        sc: Strides,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, s: Strides) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * s.row + (cols as isize - 1) * s.col;
    assert!(
        s.row >= 0 && s.col >= 0 && (last as usize) < len,
        "gemm view {rows}x{cols} with strides {s:?} exceeds buffer of {len}"
    );
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Scalar for $t {
            const BYTES: usize = std::mem::size_of::<$t>();
            const NAME: &'static str = $name;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut raw = [0u8; std::mem::size_of::<$t>()];
                raw.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(raw)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                sa: Strides,
                b: &[Self],
                sb: Strides,
                beta: Self,
                c: &mut [Self],
                sc: Strides,
            ) {
                check_extent(a.len(), m, k, sa);
                check_extent(b.len(), k, n, sb);
                check_extent(c.len(), m, n, sc);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every addressed element was bounds-checked above and
                // `c` is borrowed mutably, so it cannot alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        sa.row,
                        sa.col,
                        b.as_ptr(),
                        sb.row,
                        sb.col,
                        beta,
                        c.as_mut_ptr(),
                        sc.row,
                        sc.col,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);
