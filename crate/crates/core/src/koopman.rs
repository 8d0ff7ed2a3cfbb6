//! Empirical-L₂ Koopman machinery: lifting, forward/backward EDMD, principal
//! arguments between a subspace and its image, and invariance proximity.
//!
//! All data matrices are scaled by `1/√N` when they are built, so plain
//! Euclidean products below implement the empirical inner product
//! `⟨f, g⟩ = (1/N) Σ f(x_i) g(x_i)`.
//!
//! Principal arguments are kept in *frame coordinates*: one Householder QR of
//! `[A | B]` gives an orthonormal frame `F` (N×r, r ≤ 2s) that contains both the
//! subspace and its image. Every vector the pruning loop touches afterwards lives
//! in `range(F)`, so updates cost `O(s³)` and never revisit the sample dimension.
//! Evaluated vectors are materialized on demand as `F·(local coordinates)`.

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::linalg::{
    angles::{cross_gram_angles, sort_ascending},
    lstsq, lstsq_full_rank, range_basis, solve_upper, thin_qr, ThinQr, RANK_TOL,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

/// Raw dictionary evaluated on both halves of the snapshot set, scaled by `1/√N`.
#[derive(Debug, Clone)]
pub struct DictionaryData {
    pub dict: Dictionary,
    pub psi_x: DMatrix<f64>,
    pub psi_xp: DMatrix<f64>,
}

impl DictionaryData {
    pub fn new(dict: &Dictionary, x: &DMatrix<f64>, x_plus: &DMatrix<f64>) -> Result<Self> {
        check_pairs(x, x_plus, dict.state_dim())?;
        let scale = 1.0 / (x.nrows() as f64).sqrt();
        Ok(Self {
            dict: dict.clone(),
            psi_x: dict.evaluate(x)? * scale,
            psi_xp: dict.evaluate(x_plus)? * scale,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.psi_x.nrows()
    }

    /// Lifted data for the basis `basis_coeff` (raw-dictionary coordinates).
    pub fn lift(&self, basis_coeff: &DMatrix<f64>) -> Result<LiftedData> {
        if basis_coeff.nrows() != self.psi_x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "basis has {} rows for a dictionary of {} functions",
                basis_coeff.nrows(),
                self.psi_x.ncols()
            )));
        }
        Ok(LiftedData {
            a: &self.psi_x * basis_coeff,
            b: &self.psi_xp * basis_coeff,
            basis_coeff: basis_coeff.clone(),
        })
    }
}

fn check_pairs(x: &DMatrix<f64>, x_plus: &DMatrix<f64>, n: usize) -> Result<()> {
    if x.shape() != x_plus.shape() {
        return Err(Error::DimensionMismatch(format!(
            "x is {}x{} but x_plus is {}x{}",
            x.nrows(),
            x.ncols(),
            x_plus.nrows(),
            x_plus.ncols()
        )));
    }
    if x.ncols() != n {
        return Err(Error::DimensionMismatch(format!("states have {} columns, expected {n}", x.ncols())));
    }
    if x.nrows() == 0 {
        return Err(Error::DimensionMismatch("no snapshot pairs".into()));
    }
    Ok(())
}

/// A basis evaluated on `X` (`a`) and `X⁺` (`b`), both scaled by `1/√N`.
#[derive(Debug, Clone)]
pub struct LiftedData {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub basis_coeff: DMatrix<f64>,
}

impl LiftedData {
    pub fn dim(&self) -> usize {
        self.a.ncols()
    }
}

/// Lift raw snapshots through `dict` and the basis `basis_coeff`.
pub fn lift(
    dict: &Dictionary,
    basis_coeff: &DMatrix<f64>,
    x: &DMatrix<f64>,
    x_plus: &DMatrix<f64>,
) -> Result<LiftedData> {
    DictionaryData::new(dict, x, x_plus)?.lift(basis_coeff)
}

/// Forward and backward EDMD matrices and the consistency matrix.
#[derive(Debug, Clone)]
pub struct KoopmanMatrices {
    /// `a†b`: coefficients of the projected image, `a·k_f ≈ b`.
    pub k_f: DMatrix<f64>,
    /// `b†a`.
    pub k_b: DMatrix<f64>,
    /// `I − k_f·k_b`; its eigenvalues are the squared principal sines.
    pub m_c: DMatrix<f64>,
}

pub fn edmd(data: &LiftedData) -> Result<KoopmanMatrices> {
    let s = data.dim();
    if data.b.shape() != data.a.shape() {
        return Err(Error::DimensionMismatch("a and b differ in shape".into()));
    }
    let k_f = lstsq_full_rank(&data.a, &data.b, "a")?;
    let k_b = lstsq_full_rank(&data.b, &data.a, "b")?;
    let m_c = DMatrix::identity(s, s) - &k_f * &k_b;
    Ok(KoopmanMatrices { k_f, k_b, m_c })
}

/// Principal angles between `S = range(a)` and `KS = range(b)` together with
/// the principal vectors of `S` and a QR factorization of their image.
#[derive(Debug, Clone)]
pub struct PrincipalArguments {
    /// Ascending principal angles.
    pub theta: DVector<f64>,
    /// `sin θ`, computed directly rather than through `sin(acos(·))`.
    pub sines: DVector<f64>,
    /// Principal vectors of `S` in raw-dictionary coordinates (s₀×s).
    pub u_coeff: DMatrix<f64>,
    /// Principal vectors of `S` in frame coordinates (r×s, orthonormal).
    pub u_local: DMatrix<f64>,
    /// QR of the image `K·U` in frame coordinates: `q` is r×s, `r` is s×s.
    pub image_qr: ThinQr,
    /// Dimension of `KS` detected when these arguments were computed from scratch.
    pub image_rank: usize,
    frame: Arc<DMatrix<f64>>,
}

impl PrincipalArguments {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Orthonormal frame (N×r) that the local coordinates refer to.
    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    /// Principal vectors of `S` evaluated on `X` (N×s, orthonormal).
    pub fn u_eval(&self) -> DMatrix<f64> {
        self.frame.as_ref() * &self.u_local
    }

    /// `q` factor of the image QR evaluated on the data (N×s).
    pub fn image_w_eval(&self) -> DMatrix<f64> {
        self.frame.as_ref() * &self.image_qr.q
    }

    /// Same frame, new local data; used by the incremental update.
    pub(crate) fn with_local(
        &self,
        theta: DVector<f64>,
        sines: DVector<f64>,
        u_coeff: DMatrix<f64>,
        u_local: DMatrix<f64>,
        image_qr: ThinQr,
    ) -> Self {
        let image_rank = self.image_rank.min(theta.len());
        Self {
            theta,
            sines,
            u_coeff,
            u_local,
            image_qr,
            image_rank,
            frame: Arc::clone(&self.frame),
        }
    }
}

/// Intermediate frame-coordinate quantities shared by the public entry points.
struct FrameAngles {
    frame: DMatrix<f64>,
    r_a: DMatrix<f64>,
    /// `a` and `b` in frame coordinates (r×s).
    a_loc: DMatrix<f64>,
    b_loc: DMatrix<f64>,
    image_rank: usize,
    theta: DVector<f64>,
    sines: DVector<f64>,
    /// Principal vectors of `S` in the `Q_A` coordinates (s×s).
    u_tilde: DMatrix<f64>,
    /// Principal vectors of `KS` in frame coordinates (r×s); zero columns where
    /// `KS` is deficient.
    v_loc: DMatrix<f64>,
}

fn frame_angles(data: &LiftedData) -> Result<FrameAngles> {
    let (n, s) = data.a.shape();
    if data.b.shape() != (n, s) {
        return Err(Error::DimensionMismatch("a and b differ in shape".into()));
    }
    if s == 0 {
        return Err(Error::DimensionMismatch("empty subspace".into()));
    }
    if n < s {
        return Err(Error::RankDeficient("a"));
    }
    let mut stacked = DMatrix::zeros(n, 2 * s);
    stacked.columns_mut(0, s).copy_from(&data.a);
    stacked.columns_mut(s, s).copy_from(&data.b);
    let qr = stacked.qr();
    let frame = qr.q();
    let r_full = qr.r();
    let r = frame.ncols();

    let r_a = r_full.view((0, 0), (s, s)).into_owned();
    let dmax = (0..s).map(|i| r_a[(i, i)].abs()).fold(0.0, f64::max);
    if dmax == 0.0 || (0..s).any(|i| r_a[(i, i)].abs() < RANK_TOL * dmax) {
        return Err(Error::RankDeficient("a"));
    }
    let a_loc = r_full.columns(0, s).into_owned();
    let b_loc = r_full.columns(s, s).into_owned();

    // Q_A in frame coordinates is [I; 0], so Q_Aᵀ Q_B is the top block of Q_B.
    // The SVD's left vectors are re-orthonormalized: their orthogonality can
    // degrade well above working precision on ill-conditioned input.
    let q_b = thin_qr(&range_basis(&b_loc))?.q;
    let rb = q_b.ncols().min(s);
    let mut cross = DMatrix::zeros(s, s);
    cross.columns_mut(0, rb).copy_from(&q_b.view((0, 0), (s, rb)));
    let pa = cross_gram_angles(&cross)?;
    let mut u_tilde = pa.u_coeff;
    let mut v_small = pa.v_coeff;

    // Refine: sines from the projection residual stay accurate for tiny angles.
    let mut theta = DVector::zeros(s);
    let mut sines = DVector::zeros(s);
    for j in 0..s {
        let mut u_loc = DVector::zeros(r);
        u_loc.rows_mut(0, s).copy_from(&u_tilde.column(j));
        let coords = q_b.tr_mul(&u_loc);
        let c = coords.norm();
        let sn = (&u_loc - &q_b * &coords).norm();
        theta[j] = sn.atan2(c);
        sines[j] = theta[j].sin();
    }
    {
        let mut cols = [&mut u_tilde, &mut v_small];
        sort_ascending_with_sines(&mut theta, &mut sines, &mut cols);
    }
    let v_loc = &q_b.columns(0, rb) * v_small.rows(0, rb);

    Ok(FrameAngles {
        frame,
        r_a,
        a_loc,
        b_loc,
        image_rank: rb,
        theta,
        sines,
        u_tilde,
        v_loc,
    })
}

fn sort_ascending_with_sines(theta: &mut DVector<f64>, sines: &mut DVector<f64>, cols: &mut [&mut DMatrix<f64>]) {
    let original = theta.clone();
    let s_orig = sines.clone();
    sort_ascending(theta, cols);
    // Apply the same permutation to the sines by matching sorted angles.
    let mut order: Vec<usize> = (0..original.len()).collect();
    order.sort_by(|&i, &j| original[i].total_cmp(&original[j]));
    for (dst, &src) in order.iter().enumerate() {
        sines[dst] = s_orig[src];
    }
}

/// Principal angles and vectors between `range(a)` and `range(b)`.
///
/// If `b` is rank deficient, the missing image directions are reported with
/// angle `π/2` and sort last.
pub fn principal_arguments(data: &LiftedData) -> Result<PrincipalArguments> {
    let fa = frame_angles(data)?;
    let s = data.dim();
    let r = fa.frame.ncols();
    let coeff_small = solve_upper(&fa.r_a, &fa.u_tilde)?;
    let u_coeff = &data.basis_coeff * &coeff_small;
    let mut u_local = DMatrix::zeros(r, s);
    u_local.rows_mut(0, s).copy_from(&fa.u_tilde);
    let image_qr = thin_qr(&(&fa.b_loc * &coeff_small))?;
    Ok(PrincipalArguments {
        theta: fa.theta,
        sines: fa.sines,
        u_coeff,
        u_local,
        image_qr,
        image_rank: fa.image_rank,
        frame: Arc::new(fa.frame),
    })
}

/// `δ(S) = sin θ_max`, zero for an empty subspace.
pub fn invariance_proximity(args: &PrincipalArguments) -> f64 {
    args.sines.iter().cloned().fold(0.0, f64::max).clamp(0.0, 1.0)
}

/// Largest relative one-step EDMD residual `‖Kf − K_EDMD f‖ / ‖Kf‖` over `f ∈ S`.
///
/// Evaluates the analytic maximizer (the preimage of the top principal vector of
/// `KS`) plus `trials` random functions drawn with `seed`.
pub fn worst_case_edmd_error(data: &LiftedData, trials: usize, seed: u64) -> Result<f64> {
    let km = edmd(data)?;
    let fa = frame_angles(data)?;
    let s = data.dim();
    let ratio = |c: &DVector<f64>| -> f64 {
        let kf = &fa.b_loc * c;
        let pred = &fa.a_loc * (&km.k_f * c);
        let denom = kf.norm();
        if denom == 0.0 {
            0.0
        } else {
            (kf - pred).norm() / denom
        }
    };
    let mut worst: f64 = 0.0;
    if let Some(j) = (0..s).rev().find(|&j| fa.v_loc.column(j).norm() > 0.5) {
        let target = fa.v_loc.column(j).into_owned();
        let c = lstsq(&fa.b_loc, &DMatrix::from_column_slice(target.len(), 1, target.as_slice()))?;
        worst = worst.max(ratio(&c.column(0).into_owned()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let c = DVector::from_fn(s, |_, _| StandardNormal.sample(&mut rng));
        worst = worst.max(ratio(&c));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{Generator, Observable};
    use crate::linalg::{max_subspace_angle, orthonormality_residual, pinv};
    use crate::systems::{generate_data, ExperimentConfig, SystemSpec};
    use crate::testutil::{gaussian, planted_coeffs, random_lifted, rng};
    use std::f64::consts::FRAC_PI_2;

    fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
        let mut ev: Vec<f64> = m.clone().complex_eigenvalues().iter().map(|z| z.re).collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    fn eigen_data() -> LiftedData {
        let dict = Dictionary::from_generators(2, &[Generator::Monomials { max_degree: 2 }]).unwrap();
        let data = generate_data(&ExperimentConfig::new(SystemSpec::benchmark2d(11), 30, 20)).unwrap();
        lift(&dict, &planted_coeffs(&dict), &data.x, &data.x_plus).unwrap()
    }

    #[test]
    fn lift_static_and_single_point() {
        let dict = Dictionary::new(2, vec![Observable::Coordinate { index: 0 }, Observable::Coordinate { index: 1 }])
            .unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let l = lift(&dict, &DMatrix::identity(2, 2), &x, &x).unwrap();
        assert_eq!(l.a, l.b);
        assert!((l.a[(0, 0)] - 1.0 / 3f64.sqrt()).abs() < 1e-15);

        let c = Dictionary::new(1, vec![Observable::Constant]).unwrap();
        let p = DMatrix::from_element(1, 1, 0.3);
        let l = lift(&c, &DMatrix::identity(1, 1), &p, &p).unwrap();
        assert_eq!(l.a, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(l.b, l.a);

        let bad = DMatrix::zeros(2, 2);
        assert!(matches!(lift(&dict, &DMatrix::identity(2, 2), &x, &bad), Err(Error::DimensionMismatch(_))));
        assert!(matches!(lift(&dict, &DMatrix::identity(3, 3), &x, &x), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn planted_eigenfunctions_scale_by_eigenvalues() {
        let l = eigen_data();
        for (j, lam) in [1.0, 0.8, 0.64, 0.9].into_iter().enumerate() {
            let diff = (l.b.column(j) - l.a.column(j) * lam).norm();
            assert!(diff < 1e-10 * l.a.column(j).norm(), "column {j}: {diff}");
        }
        let km = edmd(&l).unwrap();
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.8, 0.64, 0.9]));
        assert!((km.k_f - expect).amax() < 1e-6);
        assert!(invariance_proximity(&principal_arguments(&l).unwrap()) <= 1e-6);
    }

    #[test]
    fn edmd_identity_dynamics() {
        let mut l = random_lifted(1, 50, 4, 0.0);
        l.b = l.a.clone();
        let km = edmd(&l).unwrap();
        assert!((km.k_f - DMatrix::identity(4, 4)).amax() < 1e-12);
        assert!((km.k_b - DMatrix::identity(4, 4)).amax() < 1e-12);
        assert!(km.m_c.amax() < 1e-12);
        let args = principal_arguments(&l).unwrap();
        assert!(args.theta.amax() < 1e-7);
        assert!(invariance_proximity(&args) < 1e-7);
    }

    #[test]
    fn edmd_matches_pseudoinverse_oracle() {
        let l = random_lifted(2, 200, 5, 0.5);
        let km = edmd(&l).unwrap();
        assert!((&km.k_f - pinv(&l.a) * &l.b).amax() < 1e-10);
        assert!((&km.k_b - pinv(&l.b) * &l.a).amax() < 1e-10);
    }

    #[test]
    fn edmd_names_the_rank_deficient_matrix() {
        let mut l = random_lifted(3, 40, 3, 0.5);
        let c0 = l.a.column(0).into_owned();
        l.a.set_column(2, &c0);
        assert!(matches!(edmd(&l), Err(Error::RankDeficient("a"))));
        let mut l = random_lifted(3, 40, 3, 0.5);
        l.b.set_column(1, &DVector::zeros(40));
        assert!(matches!(edmd(&l), Err(Error::RankDeficient("b"))));
        assert!(principal_arguments(&l).is_ok());
    }

    #[test]
    fn orthogonal_ranges_give_right_angles() {
        let mut r = rng(4);
        let q = gaussian(&mut r, 60, 6).qr().q();
        let l = LiftedData {
            a: q.columns(0, 3).into_owned(),
            b: q.columns(3, 3).into_owned() * 2.0,
            basis_coeff: DMatrix::identity(3, 3),
        };
        let args = principal_arguments(&l).unwrap();
        assert!(args.theta.iter().all(|t| (t - FRAC_PI_2).abs() < 1e-12));
        assert_eq!(invariance_proximity(&args), 1.0);
    }

    #[test]
    fn deficient_image_directions_are_right_angles() {
        let mut l = random_lifted(5, 80, 5, 0.2);
        let c = l.b.column(0) * 2.0;
        l.b.set_column(4, &c);
        let args = principal_arguments(&l).unwrap();
        assert_eq!(args.image_rank, 4);
        assert!((args.theta[4] - FRAC_PI_2).abs() < 1e-12);
        assert!(args.theta[3] < FRAC_PI_2 - 1e-3);
    }

    #[test]
    fn consistency_spectrum_equals_squared_sines() {
        for seed in 0..20 {
            let l = random_lifted(100 + seed, 100, 6, 0.8);
            let km = edmd(&l).unwrap();
            let args = principal_arguments(&l).unwrap();
            let ev = sorted_eigenvalues(&km.m_c);
            for (e, s) in ev.iter().zip(args.sines.iter()) {
                assert!((e - s * s).abs() < 1e-9, "seed {seed}: {e} vs {}", s * s);
            }
        }
    }

    #[test]
    fn principal_argument_invariants() {
        let l = random_lifted(6, 120, 7, 0.7);
        let args = principal_arguments(&l).unwrap();
        let u = args.u_eval();
        assert!(orthonormality_residual(&u) < 1e-10);
        assert!((&l.a * &args.u_coeff - &u).amax() < 1e-10);
        assert!(args.theta.as_slice().windows(2).all(|w| w[0] <= w[1]));
        assert!(args.sines.iter().all(|&s| (0.0..=1.0).contains(&s)));
        let image = &l.b * &args.u_coeff;
        let wr = args.image_w_eval() * &args.image_qr.r;
        assert!((image - wr).amax() < 1e-9);
        // Angles agree with an independent SVD of orthonormal bases.
        let qa = l.a.clone().qr().q();
        let qb = l.b.clone().qr().q();
        let mut sv: Vec<f64> = (qa.transpose() * qb).singular_values().iter().cloned().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        for (j, c) in sv.iter().enumerate() {
            assert!((args.theta[j] - c.min(1.0).acos()).abs() < 1e-7);
        }
    }

    #[test]
    fn top_consistency_eigenvector_is_top_principal_vector() {
        for seed in 0..10 {
            let l = random_lifted(200 + seed, 150, 6, 0.9);
            let km = edmd(&l).unwrap();
            let eig = km.m_c.clone().complex_eigenvalues();
            let (j, lam) = eig.iter().enumerate().max_by(|a, b| a.1.re.total_cmp(&b.1.re)).unwrap();
            let _ = j;
            // Null vector of m_c − λI through an SVD.
            let shifted = &km.m_c - DMatrix::identity(6, 6) * lam.re;
            let svd = shifted.svd(false, true);
            let (k, _) = svd.singular_values.argmin();
            let e = svd.v_t.unwrap().row(k).transpose();
            let f = &l.a * e;
            let args = principal_arguments(&l).unwrap();
            let u_top = args.u_eval().column(5).into_owned();
            let cos = f.dot(&u_top).abs() / f.norm();
            assert!(cos >= 1.0 - 1e-8, "seed {seed}: {cos}");
        }
    }

    #[test]
    fn alternate_characterization_lower_bound() {
        let l = random_lifted(7, 100, 5, 0.6);
        let args = principal_arguments(&l).unwrap();
        let cos_max = args.theta.max().cos();
        let qb = l.b.clone().qr().q();
        let mut r = rng(8);
        let mut min_ratio = f64::INFINITY;
        for _ in 0..10_000 {
            let x = &l.a * gaussian(&mut r, 5, 1);
            let proj = qb.tr_mul(&x).norm();
            min_ratio = min_ratio.min(proj / x.norm());
        }
        assert!(min_ratio >= cos_max - 1e-8);
    }

    #[test]
    fn proximity_edge_values() {
        let l = random_lifted(9, 30, 3, 0.0);
        assert!(invariance_proximity(&principal_arguments(&l).unwrap()) < 1e-7);
    }

    #[test]
    fn worst_case_error_matches_proximity() {
        for seed in 0..5 {
            let l = random_lifted(300 + seed, 150, 5, 0.5);
            let delta = invariance_proximity(&principal_arguments(&l).unwrap());
            let analytic = worst_case_edmd_error(&l, 0, seed).unwrap();
            assert!((analytic - delta).abs() < 1e-8, "{analytic} vs {delta}");
            let sampled = worst_case_edmd_error(&l, 500, seed).unwrap();
            assert!(sampled <= delta + 1e-8);
        }
        let mut l = random_lifted(10, 40, 3, 0.0);
        l.b = l.a.clone();
        assert!(worst_case_edmd_error(&l, 50, 1).unwrap() < 1e-8);
    }

    #[test]
    fn subspace_is_invariant_to_basis_choice() {
        let l = random_lifted(11, 90, 4, 0.4);
        let mut r = rng(12);
        let t = gaussian(&mut r, 4, 4);
        let l2 = LiftedData { a: &l.a * &t, b: &l.b * &t, basis_coeff: t };
        let p1 = principal_arguments(&l).unwrap();
        let p2 = principal_arguments(&l2).unwrap();
        assert!((&p1.theta - &p2.theta).amax() < 1e-10);
        assert!(max_subspace_angle(&p1.u_eval(), &p2.u_eval()) < 1e-9);
    }
}
