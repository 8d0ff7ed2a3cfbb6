use super::{orthonormality_residual, SIGN_THRESHOLD};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Inputs to [`principal_angles`] must satisfy `‖QᵀQ − I‖_F ≤ ORTHONORMAL_TOL`.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Singular values in `(1, 1 + CLAMP_SLACK]` are clamped to one; larger ones are an error.
const CLAMP_SLACK: f64 = 1e-12;

/// Principal angles (ascending) and the coefficient vectors realizing them.
#[derive(Debug, Clone)]
pub struct PrincipalAngles {
    pub theta: DVector<f64>,
    /// Left singular vectors of `q_uᵀ q_v`, column `j` paired with `theta[j]`.
    pub u_coeff: DMatrix<f64>,
    /// Right singular vectors, same pairing.
    pub v_coeff: DMatrix<f64>,
}

/// Principal angles between `range(q_u)` and `range(q_v)` via the SVD of `q_uᵀ q_v`.
///
/// Angles come back ascending, so `cos θ` is the singular values reversed.
pub fn principal_angles(q_u: &DMatrix<f64>, q_v: &DMatrix<f64>) -> Result<PrincipalAngles> {
    if q_u.nrows() != q_v.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "bases live in R^{} and R^{}",
            q_u.nrows(),
            q_v.nrows()
        )));
    }
    let ru = orthonormality_residual(q_u);
    if ru > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal("q_u", ru));
    }
    let rv = orthonormality_residual(q_v);
    if rv > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal("q_v", rv));
    }
    let (d1, d2) = (q_u.ncols(), q_v.ncols());
    let k = d1.min(d2);
    if k == 0 {
        return Ok(PrincipalAngles {
            theta: DVector::zeros(0),
            u_coeff: DMatrix::zeros(d1, 0),
            v_coeff: DMatrix::zeros(d2, 0),
        });
    }
    cross_gram_angles(&q_u.tr_mul(q_v))
}

/// Angles from a precomputed cross-Gram matrix `q_uᵀ q_v` (no orthonormality check).
pub(crate) fn cross_gram_angles(m: &DMatrix<f64>) -> Result<PrincipalAngles> {
    let (d1, d2) = m.shape();
    let k = d1.min(d2);
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let sv = &svd.singular_values;

    // Descending singular values are ascending angles.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));

    let mut theta = DVector::zeros(k);
    let mut u_coeff = DMatrix::zeros(d1, k);
    let mut v_coeff = DMatrix::zeros(d2, k);
    for (dst, &src) in order.iter().enumerate() {
        let mut s = sv[src];
        if s > 1.0 + CLAMP_SLACK {
            return Err(Error::NotOrthonormal("cross-Gram singular value", s - 1.0));
        }
        s = s.min(1.0);
        theta[dst] = s.acos();
        u_coeff.set_column(dst, &u.column(src));
        v_coeff.set_column(dst, &vt.row(src).transpose());
    }
    // Pair the sign flip of u with the same flip of v so uᵀ M v stays ≥ 0.
    for j in 0..k {
        if let Some(&first) = u_coeff.column(j).iter().find(|v| v.abs() > SIGN_THRESHOLD) {
            if first < 0.0 {
                u_coeff.column_mut(j).neg_mut();
                v_coeff.column_mut(j).neg_mut();
            }
        }
    }
    Ok(PrincipalAngles { theta, u_coeff, v_coeff })
}

/// Re-sort angle data ascending after an in-place refinement.
pub(crate) fn sort_ascending(theta: &mut DVector<f64>, cols: &mut [&mut DMatrix<f64>]) {
    let k = theta.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| theta[i].total_cmp(&theta[j]));
    if order.iter().enumerate().all(|(i, &j)| i == j) {
        return;
    }
    let t = theta.clone();
    for (dst, &src) in order.iter().enumerate() {
        theta[dst] = t[src];
    }
    for m in cols.iter_mut() {
        let old = m.clone();
        for (dst, &src) in order.iter().enumerate() {
            m.set_column(dst, &old.column(src));
        }
    }
}
