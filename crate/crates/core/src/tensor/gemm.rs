/// Largest linear offset touched by a `rows × cols` view with the given strides.
fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// `c[m×n] = a[m×k]·b[k×n]` (or `+=` when `accumulate`), with `c` row-major
/// contiguous and `a`, `b` given as (row stride, column stride) views so
/// transposed operands need no copy.
///
/// Backed by `matrixmultiply::dgemm`, whose blocking depends only on the
/// operand sizes, so repeated calls with identical inputs are bit-identical.
#[allow(clippy::too_many_arguments)]
pub fn matmul_into(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(extent(m, k, a_strides.0, a_strides.1) <= a.len(), "lhs view out of bounds");
    assert!(extent(k, n, b_strides.0, b_strides.1) <= b.len(), "rhs view out of bounds");
    assert!(m * n <= c.len(), "output view out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: every view was bounds-checked against its slice above and the
    // output slice is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
