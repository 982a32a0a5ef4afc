use crate::element::Element;

/// Dense matrix product `out = A_op · B_op` on flat row-major buffers,
/// where `A_op` is `a` read as `m×k` (or its transpose when `trans_a`,
/// with `a` stored `k×m`), and likewise for `b`. `out` is `m×n` and is
/// overwritten.
pub fn matmul_into<E: Element>(
    out: &mut [E],
    a: &[E],
    b: &[E],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) {
    assert_eq!(a.len(), m * k, "lhs buffer length");
    assert_eq!(b.len(), k * n, "rhs buffer length");
    assert_eq!(out.len(), m * n, "output buffer length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.fill(E::zero());
        return;
    }
    let (rsa, csa) = if trans_a {
        (1isize, m as isize)
    } else {
        (k as isize, 1isize)
    };
    let (rsb, csb) = if trans_b {
        (1isize, k as isize)
    } else {
        (n as isize, 1isize)
    };
    unsafe {
        E::gemm_raw(
            m,
            k,
            n,
            E::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            E::zero(),
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
