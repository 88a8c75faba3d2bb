//! Safe wrapper over `matrixmultiply::dgemm`.

/// `c += a · b` where `a` is m×k, `b` is k×n and `c` is m×n, each given with
/// (row stride, column stride) so transposed views need no copy.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: lhs out of bounds");
    assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: rhs out of bounds");
    assert!((m - 1) * rsc + (n - 1) * csc < c.len(), "gemm: output out of bounds");
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3x4
        let mut c = vec![1.0; 8];
        matmul_acc(2, 3, 4, &a, (3, 1), &b, (4, 1), &mut c, (4, 1));
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = 1.0 + (0..3).map(|t| a[i * 3 + t] * b[t * 4 + j]).sum::<f64>();
                assert!((c[i * 4 + j] - want).abs() < 1e-14);
            }
        }
        // aᵀ (3x2) · a (2x3)
        let mut d = vec![0.0; 9];
        matmul_acc(3, 2, 3, &a, (1, 3), &a, (3, 1), &mut d, (3, 1));
        for i in 0..3 {
            for j in 0..3 {
                let want: f64 = (0..2).map(|t| a[t * 3 + i] * a[t * 3 + j]).sum();
                assert!((d[i * 3 + j] - want).abs() < 1e-14);
            }
        }
    }
}
