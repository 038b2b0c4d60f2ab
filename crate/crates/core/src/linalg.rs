//! Small dense helpers shared by the model and structure code.

use nalgebra::{DMatrix, DVector};

/// Relative tolerance for every "is zero" decision (rank, membership,
/// residuals). Always scaled by a matrix norm via [`scaled_tol`].
pub const RANK_TOL: f64 = 1e-10;

/// `RANK_TOL * max(1, norm)`.
pub fn scaled_tol(norm: f64) -> f64 {
    RANK_TOL * norm.max(1.0)
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Matrix exponential (Padé scaling and squaring).
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().exp()
}

/// Orthonormal basis for the column span of `cols`.
///
/// Rank is the number of singular values at or above `rel_tol * sigma_max`.
/// Returns the basis (`d x rank`) and the full singular value spectrum in
/// descending order.
pub fn column_span(cols: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, Vec<f64>) {
    let d = cols.nrows();
    if cols.ncols() == 0 {
        return (DMatrix::zeros(d, 0), Vec::new());
    }
    let svd = cols.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let spectrum: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let sigma_max = spectrum.first().copied().unwrap_or(0.0);
    let keep: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| sigma_max > 0.0 && svd.singular_values[i] >= rel_tol * sigma_max)
        .collect();
    let mut basis = DMatrix::zeros(d, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        basis.set_column(k, &u.column(i));
    }
    (basis, spectrum)
}

/// Norm of the component of `v` orthogonal to the span of the orthonormal
/// columns of `basis`.
pub fn projection_residual(basis: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    if basis.ncols() == 0 {
        return v.norm();
    }
    let coeffs = basis.transpose() * v;
    (v - basis * coeffs).norm()
}

/// Orthonormal basis of the orthogonal complement of the unit vector `s`
/// (Householder reflection; columns 2..n of the reflector).
pub fn complement_basis(s: &DVector<f64>) -> DMatrix<f64> {
    let n = s.len();
    let mut v = s.clone();
    let sign = if s[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * s.norm();
    let vv = v.dot(&v);
    let reflector = if vv > 0.0 {
        DMatrix::identity(n, n) - (&v * v.transpose()) * (2.0 / vv)
    } else {
        DMatrix::identity(n, n)
    };
    reflector.columns(1, n - 1).into_owned()
}

/// Rows of a matrix as nested vectors (row-major).
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}
