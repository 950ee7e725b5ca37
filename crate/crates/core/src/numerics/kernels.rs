use super::Real;

/// `C (m×n) = op(A) · op(B) (+ C if accumulate)`, where `op(A)` is `m×k` and `op(B)` is `k×n`.
///
/// `a_trans` means `A` is stored `k×m`; `b_trans` means `B` is stored `n×k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_trans: bool,
    b: &[T],
    b_trans: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: A has {} elements, expected {m}x{k}", a.len());
    assert_eq!(b.len(), k * n, "gemm: B has {} elements, expected {k}x{n}", b.len());
    assert_eq!(c.len(), m * n, "gemm: C has {} elements, expected {m}x{n}", c.len());
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = T::zero());
        }
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(m, k, n, a, a_trans, b, b_trans, c, beta);
}
