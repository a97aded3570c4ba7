//! Thin row-major wrappers over the `matrixmultiply` f64 kernel.
//!
//! Transposition is expressed through strides, so backward passes never
//! materialize transposed copies.

/// Operand layout: the logical matrix is either the buffer as stored
/// (row-major) or its transpose.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Lay {
    N,
    T,
}

/// `c = alpha * op(a) * op(b) + beta * c` with row-major `c` of shape `m x n`.
///
/// `op(a)` has shape `m x k` and `op(b)` shape `k x n`; the physical buffers
/// hold the untransposed matrices.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    la: Lay,
    b: &[f64],
    lb: Lay,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs buffer size");
    assert_eq!(b.len(), k * n, "gemm: rhs buffer size");
    assert_eq!(c.len(), m * n, "gemm: out buffer size");
    let (rsa, csa) = match la {
        Lay::N => (k as isize, 1),
        Lay::T => (1, m as isize),
    };
    let (rsb, csb) = match lb {
        Lay::N => (n as isize, 1),
        Lay::T => (1, k as isize),
    };
    unsafe {
        matrixmultiply::dgemm(
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
            n as isize,
            1,
        );
    }
}
