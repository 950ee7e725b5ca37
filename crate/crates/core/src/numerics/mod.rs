//! Dense tensors and a reverse-mode tape.
//!
//! Everything is generic over [`Real`] so training runs in `f32` while gradient checks exercise
//! the very same code in `f64`. Tensors are row-major; most operations work on 2-D matrices
//! where rows are walk positions and columns are features.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

pub use gradcheck::{grad_check, GradCheckReport, REL_ERROR_FLOOR};
pub use kernels::gemm;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Floating-point element type of tensors and tapes.
pub trait Real:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// `C = alpha * op(A) * op(B) + beta * C` over row-major buffers; see [`gemm`].
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        c: &mut [Self],
        beta: Self,
    );

    fn from_f64_lossy(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite conversion")
    }
}

impl Real for f32 {
    fn gemm_raw(m: usize, k: usize, n: usize, a: &[f32], at: bool, b: &[f32], bt: bool, c: &mut [f32], beta: f32) {
        let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
        // SAFETY: `kernels::gemm` checked every buffer length against (m, k, n) and the strides
        // above address exactly those row-major layouts.
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
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Real for f64 {
    fn gemm_raw(m: usize, k: usize, n: usize, a: &[f64], at: bool, b: &[f64], bt: bool, c: &mut [f64], beta: f64) {
        let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
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
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

#[cfg(test)]
mod tests;
