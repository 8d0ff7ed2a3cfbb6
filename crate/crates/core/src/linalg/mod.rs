//! Dense linear-algebra kernels used by the Koopman machinery.
//!
//! Everything here is a pure function over owned `nalgebra` matrices. Storage
//! order conventions shared across the crate:
//!
//! * principal angles are stored ascending (smallest angle first);
//! * eigenvalues of [`SymmetricEigUpdateState`] are stored ascending;
//! * the first entry of each orthonormal column whose magnitude exceeds
//!   [`SIGN_THRESHOLD`] is made nonnegative;
//! * QR factors carry a nonnegative diagonal in `r`.

pub(crate) mod angles;
mod incremental;
mod qr;
mod secular;

pub use angles::{principal_angles, PrincipalAngles, ORTHONORMAL_TOL};
pub use incremental::incremental_qr;
pub use qr::{col_piv_qr, thin_qr, ColPivQr, ThinQr};
pub use secular::{rank_one_eig_update, SymmetricEigUpdateState};

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Relative tolerance for every rank decision (scaled by the largest diagonal magnitude).
pub const RANK_TOL: f64 = 1e-10;

/// Entries below this magnitude are skipped when fixing column signs.
pub const SIGN_THRESHOLD: f64 = 1e-12;

/// Flip columns so that their first significant entry is nonnegative.
pub fn normalize_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        if let Some(&first) = col.iter().find(|v| v.abs() > SIGN_THRESHOLD) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Frobenius norm of `QᵀQ − I`.
pub fn orthonormality_residual(q: &DMatrix<f64>) -> f64 {
    let mut g = q.tr_mul(q);
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g.norm()
}

/// Solve `R x = B` for upper-triangular `R` by back substitution.
pub fn solve_upper(r: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if r.nrows() != r.ncols() || r.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "triangular solve with {}x{} factor and {} right-hand rows",
            r.nrows(),
            r.ncols(),
            b.nrows()
        )));
    }
    let n = r.nrows();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        for i in (0..n).rev() {
            let mut acc = x[(i, c)];
            for j in i + 1..n {
                acc -= r[(i, j)] * x[(j, c)];
            }
            let d = r[(i, i)];
            if d == 0.0 {
                return Err(Error::RankDeficient("R"));
            }
            x[(i, c)] = acc / d;
        }
    }
    Ok(x)
}

/// Least-squares solution of `A X ≈ B`.
///
/// Full-column-rank `A` goes through thin QR and a triangular solve; otherwise
/// the SVD pseudoinverse truncated at [`RANK_TOL`] is used. Normal equations are
/// never formed.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "least squares with {} rows on the left and {} on the right",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.nrows() >= a.ncols() {
        let qr = thin_qr(a)?;
        if qr.is_full_rank(RANK_TOL) {
            return solve_upper(&qr.r, &qr.q.tr_mul(b));
        }
    }
    Ok(pinv(a) * b)
}

/// Least squares that refuses rank-deficient `A` instead of truncating.
pub fn lstsq_full_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "least squares with {} rows on the left and {} on the right",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.nrows() < a.ncols() {
        return Err(Error::RankDeficient(name));
    }
    let qr = thin_qr(a)?;
    if !qr.is_full_rank(RANK_TOL) {
        return Err(Error::RankDeficient(name));
    }
    solve_upper(&qr.r, &qr.q.tr_mul(b))
}

/// Moore–Penrose pseudoinverse with singular values below `RANK_TOL·σ_max` dropped.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.max();
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    if smax <= 0.0 {
        return out;
    }
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > RANK_TOL * smax {
            out += (vt.row(i).transpose() / s) * u.column(i).transpose();
        }
    }
    out
}

/// Orthonormal basis of `range(m)` from the SVD, truncated at `RANK_TOL·σ_max`.
pub fn range_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.max();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > RANK_TOL * smax)
        .collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

/// Orthonormal completion: columns spanning the complement of `range(q)` in `R^n`.
///
/// `q` must have orthonormal columns.
pub fn orthogonal_complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let k = q.ncols();
    if k >= n {
        return DMatrix::zeros(n, 0);
    }
    let mut aug = DMatrix::zeros(n, k + n);
    aug.columns_mut(0, k).copy_from(q);
    aug.columns_mut(k, n).fill_with_identity();
    let full_q = aug.qr().q();
    full_q.columns(k, n - k).into_owned()
}

/// Euclidean norm of each column.
pub fn column_norms(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.norm()))
}

/// Largest principal angle between the column spaces of two matrices.
///
/// Convenience for comparing subspaces in tests and consistency checks; the
/// inputs need not be orthonormal.
pub fn max_subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = range_basis(a);
    let qb = range_basis(b);
    if qa.ncols() == 0 || qb.ncols() == 0 {
        return if qa.ncols() == qb.ncols() { 0.0 } else { std::f64::consts::FRAC_PI_2 };
    }
    if qa.ncols() != qb.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    // Sine route stays accurate for tiny angles.
    let resid = &qa - &qb * qb.tr_mul(&qa);
    let s = resid.svd(false, false).singular_values.max();
    s.clamp(0.0, 1.0).asin()
}
