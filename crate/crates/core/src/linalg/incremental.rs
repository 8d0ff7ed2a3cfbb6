use super::{qr::thin_qr, ThinQr, RANK_TOL};
use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// QR of `(w·r)·t` from the factors `w`, `r` of `w·r`.
///
/// Only the small `s×(s−k)` product `r·t` is factored; the row dimension of `w`
/// enters once, in the final `w·q_c`.
pub fn incremental_qr(w: &DMatrix<f64>, r: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<ThinQr> {
    let s = w.ncols();
    if r.nrows() != s || r.ncols() != s || t.nrows() != s {
        return Err(Error::DimensionMismatch(format!(
            "incremental QR with w {}x{}, r {}x{}, t {}x{}",
            w.nrows(),
            w.ncols(),
            r.nrows(),
            r.ncols(),
            t.nrows(),
            t.ncols()
        )));
    }
    let c = r * t;
    let qr_c = thin_qr(&c)?;
    let k = qr_c.r.ncols();
    let dmax = (0..k).map(|i| qr_c.r[(i, i)].abs()).fold(0.0, f64::max);
    if let Some(bad) = (0..k)
        .map(|i| qr_c.r[(i, i)].abs())
        .find(|&d| dmax == 0.0 || d < RANK_TOL * dmax)
    {
        return Err(Error::RankDeficientUpdate(bad));
    }
    Ok(ThinQr {
        q: w * qr_c.q,
        r: qr_c.r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_subspace_angle, orthonormality_residual};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn identity_transform_keeps_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = thin_qr(&random(20, 4, &mut rng)).unwrap();
        let out = incremental_qr(&base.q, &base.r, &DMatrix::identity(4, 4)).unwrap();
        assert!((out.q - &base.q).norm() < 1e-12);
        assert!((out.r - &base.r).norm() < 1e-12);
    }

    #[test]
    fn column_deletion() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random(30, 5, &mut rng);
        let base = thin_qr(&m).unwrap();
        let t = DMatrix::identity(5, 4);
        let out = incremental_qr(&base.q, &base.r, &t).unwrap();
        let direct = thin_qr(&m.columns(0, 4).into_owned()).unwrap();
        assert!((out.q - direct.q).norm() < 1e-10);
        assert!((out.r - direct.r).norm() < 1e-10);
    }

    #[test]
    fn matches_from_scratch_qr() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = thin_qr(&random(100, 6, &mut rng)).unwrap();
        let t = random(6, 4, &mut rng);
        let out = incremental_qr(&base.q, &base.r, &t).unwrap();
        let product = &base.q * &base.r * &t;
        let direct = thin_qr(&product).unwrap();
        assert!(orthonormality_residual(&out.q) < 1e-10);
        assert!((&out.q * &out.r - &product).norm() / product.norm() < 1e-10);
        for i in 0..4 {
            assert!((out.r[(i, i)].abs() - direct.r[(i, i)].abs()).abs() < 1e-10);
        }
        assert!(max_subspace_angle(&out.q, &direct.q) < 1e-8);
    }

    #[test]
    fn rank_deficient_transform_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = thin_qr(&random(10, 3, &mut rng)).unwrap();
        let mut t = random(3, 2, &mut rng);
        let c0 = t.column(0).into_owned();
        t.set_column(1, &(c0 * 2.0));
        assert!(matches!(
            incremental_qr(&base.q, &base.r, &t),
            Err(Error::RankDeficientUpdate(_))
        ));
    }
}
