//! Symmetric rank-one eigen-update `E·diag(λ)·Eᵀ + b·bᵀ` by secular-equation root finding.
//!
//! The update works in the eigenbasis, `D + z·zᵀ` with `z = Eᵀb`, and follows the
//! usual divide-and-conquer recipe:
//!
//! 1. deflation of negligible `z_i` and of (nearly) repeated `d_i`, the latter
//!    by a Givens rotation that concentrates the weight on one index;
//! 2. one root of `f(λ) = 1 + Σ z_i² / (d_i − λ)` per interlacing interval,
//!    found by a safeguarded two-pole rational iteration. Each root is stored as
//!    `d_origin + τ` with the origin at the nearer pole so that the differences
//!    `d_i − λ_j` are computed without cancellation;
//! 3. eigenvectors from the Löwner-corrected weights `ẑ` (Gu–Eisenstat), which
//!    keeps them numerically orthogonal even for clustered roots.
//!
//! Cost is `O(m²)` for the roots and the small eigenvectors plus one `O(m·n²)`
//! product to rotate the incoming eigenbasis.

use super::normalize_column_signs;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Deflation threshold factor, applied to machine epsilon times the matrix norm bound.
const DEFLATION_FACTOR: f64 = 64.0;
const MAX_ITERATIONS: usize = 200;

/// Eigendecomposition of a symmetric matrix with ascending eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigUpdateState {
    pub lambda: DVector<f64>,
    /// Column `j` pairs with `lambda[j]`.
    pub e: DMatrix<f64>,
}

impl SymmetricEigUpdateState {
    pub fn new(lambda: DVector<f64>, e: DMatrix<f64>) -> Result<Self> {
        let m = lambda.len();
        if e.nrows() != m || e.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "{m} eigenvalues with a {}x{} eigenvector matrix",
                e.nrows(),
                e.ncols()
            )));
        }
        if lambda.as_slice().windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("eigenvalues must be ascending".into()));
        }
        Ok(Self { lambda, e })
    }

    /// `diag(lambda)` with the identity as eigenbasis. `lambda` must be ascending.
    pub fn diagonal(lambda: DVector<f64>) -> Result<Self> {
        let m = lambda.len();
        Self::new(lambda, DMatrix::identity(m, m))
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// The represented matrix `E·diag(λ)·Eᵀ`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut scaled = self.e.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.lambda[j];
        }
        scaled * self.e.transpose()
    }
}

/// A converged secular root `λ = d[origin] + tau`.
#[derive(Debug, Clone, Copy)]
struct Root {
    origin: usize,
    tau: f64,
}

/// Eigendecomposition of `E·diag(λ)·Eᵀ + b·bᵀ` from that of `E·diag(λ)·Eᵀ`.
pub fn rank_one_eig_update(
    state: &SymmetricEigUpdateState,
    b: &DVector<f64>,
) -> Result<SymmetricEigUpdateState> {
    let m = state.dim();
    if b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "update vector of length {} for a {m}-dimensional eigensystem",
            b.len()
        )));
    }
    if m == 0 {
        return Ok(state.clone());
    }

    let mut z: Vec<f64> = state.e.tr_mul(b).iter().cloned().collect();
    let mut d: Vec<f64> = state.lambda.iter().cloned().collect();
    let mut basis = state.e.clone();

    let znorm2: f64 = z.iter().map(|v| v * v).sum();
    let dmax = d.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let tol = DEFLATION_FACTOR * f64::EPSILON * (dmax + znorm2);
    let znorm = znorm2.sqrt();

    let mut deflated = vec![false; m];
    for i in 0..m {
        if znorm * z[i].abs() <= tol {
            z[i] = 0.0;
            deflated[i] = true;
        }
    }
    deflate_close_pairs(&mut d, &mut z, &mut basis, &mut deflated, tol);

    let mut active: Vec<usize> = (0..m).filter(|&i| !deflated[i]).collect();
    active.sort_by(|&i, &j| d[i].total_cmp(&d[j]));

    let mut pairs: Vec<(f64, DVector<f64>)> = Vec::with_capacity(m);
    for i in (0..m).filter(|&i| deflated[i]) {
        pairs.push((d[i], basis.column(i).into_owned()));
    }

    if !active.is_empty() {
        let dk: Vec<f64> = active.iter().map(|&i| d[i]).collect();
        let zk: Vec<f64> = active.iter().map(|&i| z[i]).collect();
        let roots = secular_roots(&dk, &zk);
        let small = secular_eigenvectors(&dk, &zk, &roots);
        let sub = DMatrix::from_fn(m, active.len(), |r, c| basis[(r, active[c])]);
        let rotated = sub * small;
        for (j, root) in roots.iter().enumerate() {
            pairs.push((dk[root.origin] + root.tau, rotated.column(j).into_owned()));
        }
    }

    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let lambda = DVector::from_iterator(m, pairs.iter().map(|p| p.0));
    let mut e = DMatrix::zeros(m, m);
    for (j, (_, v)) in pairs.iter().enumerate() {
        e.set_column(j, v);
    }
    normalize_column_signs(&mut e);
    Ok(SymmetricEigUpdateState { lambda, e })
}

/// Rotate away the `z` weight of nearly repeated eigenvalues, repeating until stable.
fn deflate_close_pairs(
    d: &mut [f64],
    z: &mut [f64],
    basis: &mut DMatrix<f64>,
    deflated: &mut [bool],
    tol: f64,
) {
    loop {
        let mut changed = false;
        let mut order: Vec<usize> = (0..d.len()).filter(|&i| !deflated[i]).collect();
        order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
        let mut prev: Option<usize> = None;
        for &i in &order {
            if let Some(j) = prev {
                let tau = z[j].hypot(z[i]);
                let c = z[i] / tau;
                let s = z[j] / tau;
                let gap = d[i] - d[j];
                if (gap * c * s).abs() <= tol {
                    // G = [[c, s], [-s, c]] on columns (j, i) sends z to (0, tau).
                    for r in 0..basis.nrows() {
                        let (ej, ei) = (basis[(r, j)], basis[(r, i)]);
                        basis[(r, j)] = c * ej - s * ei;
                        basis[(r, i)] = s * ej + c * ei;
                    }
                    let (dj, di) = (d[j], d[i]);
                    d[j] = c * c * dj + s * s * di;
                    d[i] = s * s * dj + c * c * di;
                    z[j] = 0.0;
                    z[i] = tau;
                    deflated[j] = true;
                    changed = true;
                }
            }
            prev = Some(i);
        }
        if !changed {
            break;
        }
    }
}

/// All roots of `1 + Σ z_i²/(d_i − λ)` for strictly ascending `d` and nonzero `z`.
fn secular_roots(d: &[f64], z: &[f64]) -> Vec<Root> {
    let n = d.len();
    let z2: Vec<f64> = z.iter().map(|v| v * v).collect();
    let znorm2: f64 = z2.iter().sum();
    (0..n)
        .map(|j| {
            if j + 1 < n {
                let gap = d[j + 1] - d[j];
                let mid = d[j] + 0.5 * gap;
                let f_mid = 1.0 + (0..n).map(|i| z2[i] / (d[i] - mid)).sum::<f64>();
                if f_mid >= 0.0 {
                    solve_interval(d, &z2, j, j, 0.0, 0.5 * gap)
                } else {
                    solve_interval(d, &z2, j, j + 1, -0.5 * gap, 0.0)
                }
            } else {
                solve_interval(d, &z2, j, j, 0.0, znorm2)
            }
        })
        .collect()
}

/// Root in interval `j` with `λ = d[origin] + τ`, `τ` bracketed by `[lo, hi]`.
///
/// Bracket ends that coincide with a pole are open.
fn solve_interval(d: &[f64], z2: &[f64], j: usize, origin: usize, lo: f64, hi: f64) -> Root {
    let n = d.len();
    let diff: Vec<f64> = d.iter().map(|v| v - d[origin]).collect();
    let left_pole = diff[j];
    let right_pole = if j + 1 < n { Some(diff[j + 1]) } else { None };

    let (mut lo, mut hi) = (lo, hi);
    let mut tau = 0.5 * (lo + hi);
    for _ in 0..MAX_ITERATIONS {
        let mut psi = 0.0;
        let mut dpsi = 0.0;
        let mut phi = 0.0;
        let mut dphi = 0.0;
        let mut abs_sum = 1.0;
        for i in 0..n {
            let delta = diff[i] - tau;
            let t = z2[i] / delta;
            abs_sum += t.abs();
            if i <= j {
                psi += t;
                dpsi += t / delta;
            } else {
                phi += t;
                dphi += t / delta;
            }
        }
        let g = 1.0 + psi + phi;
        if g == 0.0 || g.abs() <= 4.0 * f64::EPSILON * (n as f64) * abs_sum {
            break;
        }
        if g < 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        let width = hi - lo;
        if width <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) || width <= f64::MIN_POSITIVE {
            break;
        }

        let dl = left_pole - tau;
        let candidate = match right_pole {
            Some(pr) => {
                let dr = pr - tau;
                let b1 = dpsi * dl * dl;
                let b2 = dphi * dr * dr;
                let c = 1.0 + (psi - dpsi * dl) + (phi - dphi * dr);
                let bq = c * (dl + dr) + b1 + b2;
                let c0 = g * dl * dr;
                quadratic_step(c, bq, c0, lo - tau, hi - tau)
            }
            None => {
                let b1 = dpsi * dl * dl;
                let c = 1.0 + (psi - dpsi * dl) + phi;
                if c > 0.0 {
                    Some(dl + b1 / c)
                } else {
                    None
                }
            }
        };
        let next = match candidate {
            Some(eta)
                if eta.is_finite()
                    && tau + eta >= lo
                    && tau + eta <= hi
                    && tau + eta != left_pole
                    && Some(tau + eta) != right_pole =>
            {
                tau + eta
            }
            _ => 0.5 * (lo + hi),
        };
        if next == tau {
            break;
        }
        tau = next;
    }
    Root { origin, tau }
}

/// Root `η` of `a·η² − bq·η + c0 = 0` inside `(lo, hi)`, choosing the smaller step.
fn quadratic_step(a: f64, bq: f64, c0: f64, lo: f64, hi: f64) -> Option<f64> {
    let inside = |eta: f64| eta.is_finite() && eta >= lo && eta <= hi;
    if a == 0.0 {
        let eta = c0 / bq;
        return inside(eta).then_some(eta);
    }
    let disc = bq * bq - 4.0 * a * c0;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let q = if bq >= 0.0 { bq + sq } else { bq - sq };
    let candidates = [q / (2.0 * a), 2.0 * c0 / q];
    candidates
        .into_iter()
        .filter(|&e| inside(e))
        .min_by(|x, y| x.abs().total_cmp(&y.abs()))
}

/// Eigenvectors of `diag(d) + z·zᵀ` in the `d` coordinates, one column per root.
fn secular_eigenvectors(d: &[f64], z: &[f64], roots: &[Root]) -> DMatrix<f64> {
    let n = d.len();
    // delta[(i, j)] = d_i − λ_j without cancellation.
    let delta = DMatrix::from_fn(n, n, |i, j| {
        let r = roots[j];
        (d[i] - d[r.origin]) - r.tau
    });

    // Löwner weights: ẑ_i² = Π_j (λ_j − d_i) / Π_{j≠i} (d_j − d_i).
    let zhat: Vec<f64> = (0..n)
        .map(|i| {
            let mut prod = -delta[(i, n - 1)];
            for j in 0..i {
                prod *= -delta[(i, j)] / (d[j] - d[i]);
            }
            for j in i..n - 1 {
                prod *= -delta[(i, j)] / (d[j + 1] - d[i]);
            }
            prod.abs().sqrt().copysign(z[i])
        })
        .collect();

    let mut v = DMatrix::from_fn(n, n, |i, j| zhat[i] / delta[(i, j)]);
    for mut col in v.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 && norm.is_finite() {
            col /= norm;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormality_residual;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense oracle: sorted eigenpairs of an explicit symmetric matrix.
    fn dense_eig(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
        let eig = m.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..m.nrows()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs = DMatrix::from_fn(m.nrows(), m.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
        (vals, vecs)
    }

    fn random_state(m: usize, rng: &mut ChaCha8Rng) -> SymmetricEigUpdateState {
        let a = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>() - 0.5);
        let sym = &a + a.transpose();
        let (vals, vecs) = dense_eig(&sym);
        SymmetricEigUpdateState::new(DVector::from_vec(vals), vecs).unwrap()
    }

    fn check_against_dense(state: &SymmetricEigUpdateState, updated: &SymmetricEigUpdateState, b: &DVector<f64>, tol: f64) {
        let explicit = state.matrix() + b * b.transpose();
        let (vals, _) = dense_eig(&explicit);
        for (a, b) in updated.lambda.iter().zip(vals.iter()) {
            assert!((a - b).abs() < tol, "eigenvalue {a} vs {b}");
        }
        assert!(orthonormality_residual(&updated.e) < tol);
        let resid = &explicit * &updated.e - &updated.e * DMatrix::from_diagonal(&updated.lambda);
        assert!(resid.norm() < tol, "residual {}", resid.norm());
    }

    #[test]
    fn zero_update_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = random_state(4, &mut rng);
        normalize_column_signs(&mut state.e);
        let out = rank_one_eig_update(&state, &DVector::zeros(4)).unwrap();
        assert_eq!(out.lambda, state.lambda);
        assert!((out.e - state.e).norm() < 1e-15);
    }

    #[test]
    fn rank_one_on_zero_matrix() {
        let state = SymmetricEigUpdateState::diagonal(DVector::zeros(3)).unwrap();
        let b = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let out = rank_one_eig_update(&state, &b).unwrap();
        assert_eq!(out.lambda.as_slice(), &[0.0, 0.0, 1.0]);
        let top = out.e.column(2);
        assert!((top[0] - 1.0).abs() < 1e-15 && top[1].abs() < 1e-15 && top[2].abs() < 1e-15);
    }

    #[test]
    fn random_update_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let state = random_state(5, &mut rng);
        let b = DVector::from_fn(5, |_, _| rng.random::<f64>() - 0.5);
        let out = rank_one_eig_update(&state, &b).unwrap();
        check_against_dense(&state, &out, &b, 1e-9);
    }

    #[test]
    fn repeated_eigenvalues_deflate() {
        let state = SymmetricEigUpdateState::diagonal(DVector::from_vec(vec![0.1, 0.5, 0.5, 0.5, 0.9])).unwrap();
        let b = DVector::from_vec(vec![0.3, 0.2, -0.4, 0.1, 0.0]);
        let out = rank_one_eig_update(&state, &b).unwrap();
        check_against_dense(&state, &out, &b, 1e-12);
        assert_eq!(out.lambda.iter().filter(|v| (*v - 0.5).abs() < 1e-14).count(), 2);
    }

    #[test]
    fn tiny_weights_and_clusters() {
        let lambda = DVector::from_vec(vec![0.0, 1e-14, 2e-14, 0.3, 0.3 + 1e-13, 1.0]);
        let state = SymmetricEigUpdateState::diagonal(lambda).unwrap();
        let b = DVector::from_vec(vec![1e-9, 0.5, 1e-20, 0.2, 0.2, 0.7]);
        let out = rank_one_eig_update(&state, &b).unwrap();
        check_against_dense(&state, &out, &b, 1e-12);
    }

    #[test]
    fn chained_updates_match_accumulated_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let m = rng.random_range(1..=20);
            let l = rng.random_range(1..=10);
            let mut state = SymmetricEigUpdateState::diagonal({
                let mut v: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
                v.sort_by(|a, b| a.total_cmp(b));
                DVector::from_vec(v)
            })
            .unwrap();
            let mut explicit = state.matrix();
            for _ in 0..l {
                let b = DVector::from_fn(m, |_, _| rng.random::<f64>() - 0.5);
                explicit += &b * b.transpose();
                state = rank_one_eig_update(&state, &b).unwrap();
            }
            let (vals, _) = dense_eig(&explicit);
            for (a, b) in state.lambda.iter().zip(vals.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
            assert!((state.matrix() - explicit).norm() < 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let state = SymmetricEigUpdateState::diagonal(DVector::zeros(3)).unwrap();
        assert!(matches!(
            rank_one_eig_update(&state, &DVector::zeros(2)),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
