//! Small dense least-squares helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

/// Relative threshold on |R_ii| below which a QR factor is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Builds an `n × (1 + cols.len())` design whose first column is the intercept.
pub fn design_with_intercept(n: usize, cols: &[&[f64]]) -> DMatrix<f64> {
    let mut x = DMatrix::from_element(n, cols.len() + 1, 1.0);
    for (j, col) in cols.iter().enumerate() {
        debug_assert_eq!(col.len(), n);
        x.column_mut(j + 1).copy_from_slice(col);
    }
    x
}

/// Ordinary least squares through a Householder QR factorization.
///
/// Returns `None` when the design is rank deficient or has fewer rows than columns.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let (n, p) = x.shape();
    if n < p {
        return None;
    }
    if p == 0 {
        return Some(DVector::zeros(0));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if scale == 0.0 || (0..p).any(|i| r[(i, i)].abs() <= RANK_TOL * scale) {
        return None;
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty)
}

/// Solves `(X'X + λD) β = X'y` with `D` the identity, optionally leaving the
/// intercept column (column 0) unpenalized.
pub fn ridge(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    penalize_intercept: bool,
) -> Option<DVector<f64>> {
    let mut gram = x.transpose() * x;
    for i in 0..gram.nrows() {
        if i > 0 || penalize_intercept {
            gram[(i, i)] += lambda;
        }
    }
    let rhs = x.transpose() * y;
    solve_spd(gram, &rhs)
}

/// Cholesky solve of a symmetric positive-definite system.
pub fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.cholesky()?;
    let sol = chol.solve(b);
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

/// OLS that falls back to a ridge jitter when the design is singular.
///
/// The boolean reports whether the fallback was used.
pub fn least_squares_or_ridge(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    jitter: f64,
) -> (DVector<f64>, bool) {
    if let Some(beta) = least_squares(x, y) {
        return (beta, false);
    }
    let beta = ridge(x, y, jitter, true)
        .or_else(|| ridge(x, y, jitter.max(1e-6), true))
        .unwrap_or_else(|| DVector::zeros(x.ncols()));
    (beta, true)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}
