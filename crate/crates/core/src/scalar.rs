//! Element types the engine computes in.
//!
//! Everything numeric in the crate is generic over [`Scalar`]; `f32` is the
//! training default and `f64` is used wherever results are compared against
//! finite differences.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Storage tag written into binary files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32,
    Float64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::Float32 => 0,
            DType::Float64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::Float32),
            1 => Some(DType::Float64),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            DType::Float32 => 4,
            DType::Float64 => 8,
        }
    }
}

/// A floating point element type with a dense matrix-multiply kernel.
pub trait Scalar:
    Float + FromPrimitive + NumCast + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const DTYPE: DType;

    /// `c = a · b` where the operands are addressed by row/column strides.
    ///
    /// `a` is logically `m × k`, `b` is `k × n` and `c` is a dense row-major
    /// `m × n` buffer which is overwritten.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        c: &mut [Self],
    );

    /// Lossy conversion from `f64`; used for literals and configuration values.
    fn of(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 is representable in every scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    fn write_le(self, out: &mut Vec<u8>);

    /// Decodes one element stored with `dtype` from the front of `bytes`.
    fn read_le(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::Float32 => {
                Self::of(f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64)
            }
            DType::Float64 => Self::of(f64::from_le_bytes(bytes[..8].try_into().unwrap())),
        }
    }
}

impl Scalar for f32 {
    const DTYPE: DType = DType::Float32;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        (rsa, csa): (isize, isize),
        b: &[f32],
        (rsb, csb): (isize, isize),
        c: &mut [f32],
    ) {
        debug_assert_eq!(c.len(), m * n);
        // SAFETY: callers pass buffers covering every strided index for the given extents.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::Float32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()),
            DType::Float64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()) as f32,
        }
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::Float64;

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        (rsa, csa): (isize, isize),
        b: &[f64],
        (rsb, csb): (isize, isize),
        c: &mut [f64],
    ) {
        debug_assert_eq!(c.len(), m * n);
        // SAFETY: see the f32 implementation.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposed_strides() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, &a, (2, 1), &b, (2, 1), &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        // aᵀ · b
        f64::gemm(2, 2, 2, &a, (1, 2), &b, (2, 1), &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn dtype_codes_roundtrip() {
        for d in [DType::Float32, DType::Float64] {
            assert_eq!(DType::from_code(d.code()), Some(d));
        }
        assert_eq!(DType::from_code(7), None);
    }
}
