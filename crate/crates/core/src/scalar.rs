//! The floating-point scalar abstraction every numeric routine is generic over.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating point: `f32` or `f64`.
///
/// Besides the usual arithmetic this carries a dense matrix multiply hook
/// (so convolution kernels can reach an optimized gemm for either width) and
/// a fixed little-endian byte encoding used by the binary file formats.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Width in bytes of the encoded value.
    const BYTES: usize;
    /// Tag stored in binary headers to identify the element type.
    const DTYPE: u8;
    const NAME: &'static str;

    /// `c = alpha * a * b + beta * c` for row/column strided matrices
    /// `a: m×k`, `b: k×n`, `c: m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: MatRef<'_, Self>,
        b: MatRef<'_, Self>,
        beta: Self,
        c: &mut [Self],
        c_row_stride: usize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Converts an `f64` literal. Every finite `f64` maps to some value of
    /// both supported widths, so this never fails.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

/// A borrowed strided matrix operand for [`Scalar::gemm`].
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major view with `cols` columns.
    pub fn row_major(data: &'a [T], cols: usize) -> Self {
        MatRef { data, row_stride: cols, col_stride: 1 }
    }

    /// The transpose of a row-major `rows×cols` buffer, seen as `cols×rows`.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        MatRef { data, row_stride: 1, col_stride: cols }
    }

    fn required_len(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row_stride + (cols - 1) * self.col_stride + 1
        }
    }
}

macro_rules! impl_scalar {
    ($t:ty, $tag:expr, $gemm:path) => {
        impl Scalar for $t {
            const BYTES: usize = std::mem::size_of::<$t>();
            const DTYPE: u8 = $tag;
            const NAME: &'static str = stringify!($t);

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: MatRef<'_, Self>,
                b: MatRef<'_, Self>,
                beta: Self,
                c: &mut [Self],
                c_row_stride: usize,
            ) {
                assert!(a.data.len() >= a.required_len(m, k), "gemm: lhs too short");
                assert!(b.data.len() >= b.required_len(k, n), "gemm: rhs too short");
                assert!(
                    m == 0 || n == 0 || c.len() >= (m - 1) * c_row_stride + n,
                    "gemm: output too short"
                );
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.data.as_ptr(),
                        a.row_stride as isize,
                        a.col_stride as isize,
                        b.data.as_ptr(),
                        b.row_stride as isize,
                        b.col_stride as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_row_stride as isize,
                        1,
                    );
                }
            }

            #[inline]
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            #[inline]
            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_scalar!(f32, 4, matrixmultiply::sgemm);
impl_scalar!(f64, 8, matrixmultiply::dgemm);
