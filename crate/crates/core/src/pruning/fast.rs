use crate::error::{Error, Result};
use crate::koopman::PrincipalArguments;
use crate::linalg::{incremental_qr, rank_one_eig_update, SymmetricEigUpdateState};
use nalgebra::{DMatrix, DVector};

/// Principal arguments of the subspace spanned by the `s − k` smallest-angle
/// principal vectors, obtained without revisiting the data.
///
/// Dropping the last `k` principal vectors removes the image directions
/// `w_{s−k+1..s}`, which turns the retained block of `diag(sin²θ)` into
/// `diag(sin²θ) + Σ d_l d_lᵀ` with `d_l = Uᵀw_l` restricted to the retained
/// rows. Its eigenvalues are the new squared sines and its eigenvectors rotate
/// the retained principal vectors; the image factorization follows by an
/// incremental QR with the same rotation.
pub fn fast_recompute(args: &PrincipalArguments, k: usize) -> Result<PrincipalArguments> {
    let s = args.dim();
    if k == 0 || k >= s {
        return Err(Error::InvalidConfig(format!("drop count {k} must lie in 1..{s}")));
    }
    let m = s - k;
    let w = &args.image_qr.q;
    let w_k = DMatrix::from_fn(w.nrows(), k, |i, j| w[(i, s - 1 - j)]);
    let d = args.u_local.tr_mul(&w_k);

    let lambda0 = DVector::from_fn(m, |i, _| args.sines[i] * args.sines[i]);
    let mut eig = SymmetricEigUpdateState::diagonal(lambda0)?;
    for l in 0..k {
        let b = d.view((0, l), (m, 1)).column(0).into_owned();
        eig = rank_one_eig_update(&eig, &b)?;
    }

    let mut t = DMatrix::zeros(s, m);
    t.rows_mut(0, m).copy_from(&eig.e);
    let sines = eig.lambda.map(|v| v.clamp(0.0, 1.0).sqrt());
    let theta = sines.map(f64::asin);
    let image_qr = incremental_qr(w, &args.image_qr.r, &t)?;
    Ok(args.with_local(theta, sines, &args.u_coeff * &t, &args.u_local * &t, image_qr))
}
