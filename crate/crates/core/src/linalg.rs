//! Small dense solvers for the normal equations used by linear regression
//! and the KernelSHAP weighted least squares.

/// Solves `A x = b` for a symmetric positive-definite row-major `A` (n×n)
/// by Cholesky factorization. Returns `None` when `A` is not numerically PD.
pub fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // forward then back substitution
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Some(x)
}

/// Cholesky solve that retries with `ridge` added to the diagonal when the
/// plain system is singular. The flag reports whether the ridge was needed.
pub fn solve_with_ridge(a: &[f64], b: &[f64], n: usize, ridge: f64) -> (Vec<f64>, bool) {
    if let Some(x) = cholesky_solve(a, b, n) {
        return (x, false);
    }
    let mut reg = a.to_vec();
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(1.0);
    let mut lambda = ridge;
    loop {
        for i in 0..n {
            reg[i * n + i] = a[i * n + i] + lambda * scale;
        }
        if let Some(x) = cholesky_solve(&reg, b, n) {
            return (x, true);
        }
        lambda *= 10.0;
    }
}
