//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, LU};

/// Solves `B' x = rhs` given the LU factorization of `B`.
pub(crate) fn lu_solve_transpose(lu: &LU<f64, Dyn, Dyn>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    // PB = LU, so B' = U' L' P and B' x = rhs becomes U' L' (P x) = rhs.
    let w = lu.u().tr_solve_upper_triangular(rhs)?;
    let mut v = lu.l().tr_solve_lower_triangular(&w)?;
    lu.p().inv_permute_rows(&mut v);
    Some(v)
}

/// Hager's estimate of the reciprocal 1-norm condition number of `b`.
pub(crate) fn lu_rcond(b: &DMatrix<f64>, lu: &LU<f64, Dyn, Dyn>) -> f64 {
    let n = b.nrows();
    let norm_b = (0..n).map(|j| b.column(j).abs().sum()).fold(0.0, f64::max);
    if norm_b == 0.0 {
        return 0.0;
    }
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut estimate = 0.0;
    for _ in 0..5 {
        let Some(y) = lu.solve(&x) else { return 0.0 };
        estimate = y.abs().sum();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let Some(z) = lu_solve_transpose(lu, &xi) else { return 0.0 };
        let j = z.iamax();
        if z[j].abs() <= z.dot(&x) {
            break;
        }
        x.fill(0.0);
        x[j] = 1.0;
    }
    if !estimate.is_finite() || estimate == 0.0 {
        return 0.0;
    }
    1.0 / (norm_b * estimate)
}

/// `log |det B|` from an LU factorization, `None` when a pivot vanishes.
pub(crate) fn lu_log_abs_det(lu: &LU<f64, Dyn, Dyn>) -> Option<f64> {
    let u = lu.u();
    let mut acc = 0.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)].abs();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(acc)
}

pub(crate) fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

/// Crude reciprocal condition of an SPD matrix from its Cholesky diagonal.
pub(crate) fn chol_rcond(chol: &Cholesky<f64, Dyn>) -> f64 {
    let d = chol.l_dirty().diagonal();
    if d.is_empty() {
        return 1.0;
    }
    let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    (lo / hi).powi(2)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// A factor `F` with `F F' = cov`, for drawing correlated normals. Falls back
/// to an eigendecomposition for positive semidefinite matrices; `None` when
/// `cov` has a clearly negative eigenvalue.
pub(crate) fn covariance_root(cov: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if cov.is_empty() {
        return Some(cov.clone());
    }
    if let Some(chol) = Cholesky::new(cov.clone()) {
        return Some(chol.l());
    }
    let eig = SymmetricEigen::new(cov.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if eig.eigenvalues.iter().any(|&v| v < -1e-10 * top.max(f64::MIN_POSITIVE)) {
        return None;
    }
    let scale = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Some(&eig.eigenvectors * scale)
}

/// Empirical quantile with linear interpolation between order statistics.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, -1.0, 4.0])
    }

    #[test]
    fn transpose_solve_matches_explicit_transpose() {
        let b = sample();
        let lu = b.clone().lu();
        let rhs = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = lu_solve_transpose(&lu, &rhs).unwrap();
        assert_abs_diff_eq!(b.transpose() * x, rhs, epsilon = 1e-12);
    }

    #[test]
    fn rcond_is_exact_for_small_matrices() {
        let b = sample();
        let lu = b.clone().lu();
        let inv = b.clone().try_inverse().unwrap();
        let norm1 = |m: &DMatrix<f64>| (0..3).map(|j| m.column(j).abs().sum()).fold(0.0, f64::max);
        let exact = 1.0 / (norm1(&b) * norm1(&inv));
        // Hager's estimate is a lower bound on ||B^-1||_1 that is usually exact.
        let est = lu_rcond(&b, &lu);
        assert!(est >= exact * (1.0 - 1e-12));
        assert!(est <= 3.0 * exact);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(lu_rcond(&singular, &singular.clone().lu()) < 1e-15);
    }

    #[test]
    fn covariance_root_handles_psd() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = covariance_root(&cov).unwrap();
        assert_abs_diff_eq!(&f * f.transpose(), cov, epsilon = 1e-12);
        assert!(covariance_root(&DMatrix::from_row_slice(1, 1, &[-1.0])).is_none());
        let zero = DMatrix::zeros(2, 2);
        assert_eq!(covariance_root(&zero).unwrap(), zero);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.25), 2.0);
        assert_abs_diff_eq!(quantile_sorted(&v, 0.1), 1.4, epsilon = 1e-12);
    }
}
