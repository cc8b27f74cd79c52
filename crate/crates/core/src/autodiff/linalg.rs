//! Dense kernels on small row-major square matrices.

/// Signed log-magnitude of a determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    /// -1, 0 or +1.
    pub sign: f64,
    /// `ln |det|`, `-inf` when singular.
    pub log_abs: f64,
}

/// LU factorization with partial pivoting of the row-major `n x n` matrix
/// `a`. Writes the inverse into `inv` (left untouched if singular).
pub fn lu_logdet_inverse(a: &[f64], n: usize, inv: &mut [f64]) -> LogDet {
    let mut lu = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    let mut log_abs = 0.0;
    for k in 0..n {
        let mut p = k;
        let mut best = lu[k * n + k].abs();
        for i in k + 1..n {
            let v = lu[i * n + k].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            return LogDet { sign: 0.0, log_abs: f64::NEG_INFINITY };
        }
        if p != k {
            for j in 0..n {
                lu.swap(k * n + j, p * n + j);
            }
            perm.swap(k, p);
            sign = -sign;
        }
        let piv = lu[k * n + k];
        if piv < 0.0 {
            sign = -sign;
        }
        log_abs += piv.abs().ln();
        for i in k + 1..n {
            let f = lu[i * n + k] / piv;
            lu[i * n + k] = f;
            if f != 0.0 {
                for j in k + 1..n {
                    lu[i * n + j] -= f * lu[k * n + j];
                }
            }
        }
    }
    // solve A X = I column by column: P A = L U
    let mut col = vec![0.0; n];
    for c in 0..n {
        for i in 0..n {
            col[i] = if perm[i] == c { 1.0 } else { 0.0 };
        }
        for i in 0..n {
            let mut s = col[i];
            for j in 0..i {
                s -= lu[i * n + j] * col[j];
            }
            col[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for j in i + 1..n {
                s -= lu[i * n + j] * col[j];
            }
            col[i] = s / lu[i * n + i];
        }
        for i in 0..n {
            inv[i * n + c] = col[i];
        }
    }
    LogDet { sign, log_abs }
}

/// `out = a b` for row-major `n x n` matrices.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
}

/// `tr(a b)`.
pub(crate) fn trace_product(a: &[f64], b: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += a[i * n + j] * b[j * n + i];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Determinant by cofactor expansion.
    fn cofactor_det(a: &[f64], n: usize) -> f64 {
        if n == 1 {
            return a[0];
        }
        let mut det = 0.0;
        for c in 0..n {
            let minor: Vec<f64> = (1..n)
                .flat_map(|i| (0..n).filter(move |&j| j != c).map(move |j| (i, j)))
                .map(|(i, j)| a[i * n + j])
                .collect();
            let s = if c % 2 == 0 { 1.0 } else { -1.0 };
            det += s * a[c] * cofactor_det(&minor, n - 1);
        }
        det
    }

    #[test]
    fn matches_cofactor_expansion() {
        let a = [0.3, -1.2, 2.0, 0.7, 0.1, 0.5, -0.4, 1.9, 0.05, 1.1, -0.8, 0.3, 2.2, 0.0, 0.6, -1.5];
        let mut inv = [0.0; 16];
        let ld = lu_logdet_inverse(&a, 4, &mut inv);
        let det = cofactor_det(&a, 4);
        assert_eq!(ld.sign, det.signum());
        assert!((ld.log_abs - det.abs().ln()).abs() < 1e-13);
        let mut prod = [0.0; 16];
        matmul_into(&a, &inv, 4, &mut prod);
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i * 4 + j] - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn singular_gives_zero_sign() {
        let a = [1.0, 2.0, 2.0, 4.0];
        let mut inv = [0.0; 4];
        let ld = lu_logdet_inverse(&a, 2, &mut inv);
        assert_eq!(ld.sign, 0.0);
        assert_eq!(ld.log_abs, f64::NEG_INFINITY);
        let z = [0.0];
        assert_eq!(lu_logdet_inverse(&z, 1, &mut [0.0]).sign, 0.0);
    }

    #[test]
    fn row_swap_flips_sign() {
        let a = [0.0, 1.0, 1.0, 0.0];
        let mut inv = [0.0; 4];
        let ld = lu_logdet_inverse(&a, 2, &mut inv);
        assert_eq!(ld.sign, -1.0);
        assert_eq!(ld.log_abs, 0.0);
    }
}
