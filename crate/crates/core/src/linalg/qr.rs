use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Thin QR factorization `m = q·r` with orthonormal `q` (rows×k) and upper-triangular `r` (k×k).
#[derive(Debug, Clone, PartialEq)]
pub struct ThinQR {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

pub type ThinQr = ThinQR;

impl ThinQR {
    /// Indices of diagonal entries with `|r_ii| < rank_tol · max_j |r_jj|`.
    pub fn deficient_columns(&self, rank_tol: f64) -> Vec<usize> {
        let k = self.r.ncols().min(self.r.nrows());
        let dmax = (0..k).map(|i| self.r[(i, i)].abs()).fold(0.0, f64::max);
        (0..k)
            .filter(|&i| dmax == 0.0 || self.r[(i, i)].abs() < rank_tol * dmax)
            .collect()
    }

    pub fn is_full_rank(&self, rank_tol: f64) -> bool {
        self.deficient_columns(rank_tol).is_empty()
    }

    /// Smallest diagonal magnitude relative to the largest.
    pub fn min_relative_diagonal(&self) -> f64 {
        let k = self.r.ncols().min(self.r.nrows());
        let diag: Vec<f64> = (0..k).map(|i| self.r[(i, i)].abs()).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        if dmax == 0.0 {
            return 0.0;
        }
        diag.iter().cloned().fold(f64::INFINITY, f64::min) / dmax
    }
}

/// Householder thin QR. Rank-deficient input is factored anyway; callers inspect
/// [`ThinQR::deficient_columns`] to decide what a small diagonal means for them.
pub fn thin_qr(m: &DMatrix<f64>) -> Result<ThinQR> {
    let (rows, k) = m.shape();
    if rows < k {
        return Err(Error::DimensionMismatch(format!(
            "thin QR needs rows >= columns, got {rows}x{k}"
        )));
    }
    if k == 0 {
        return Ok(ThinQR {
            q: DMatrix::zeros(rows, 0),
            r: DMatrix::zeros(0, 0),
        });
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..k {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
        for j in 0..i {
            r[(i, j)] = 0.0;
        }
    }
    Ok(ThinQR { q, r })
}

/// Column-pivoted QR `m·P = q·r`, truncated to the numerical rank.
#[derive(Debug, Clone)]
pub struct ColPivQr {
    /// Original column index of each pivot, in pivot order (all columns).
    pub pivots: Vec<usize>,
    /// Full diagonal of `r` in pivot order (nonnegative).
    pub diag: Vec<f64>,
    /// Number of pivots with `|r_ii| ≥ rank_tol·|r_11|`.
    pub rank: usize,
    pub q: DMatrix<f64>,
    /// Leading `rank × rank` block of `r`.
    pub r: DMatrix<f64>,
}

/// Businger–Golub column-pivoted Householder QR.
///
/// At each step the remaining column of largest norm is brought forward.
/// Column norms are recomputed from scratch each step; the inputs this is used
/// on are small enough that downdating is not worth the cancellation risk.
pub fn col_piv_qr(m: &DMatrix<f64>, rank_tol: f64) -> ColPivQr {
    let (rows, cols) = m.shape();
    let steps = rows.min(cols);
    let mut a = m.clone();
    let mut perm: Vec<usize> = (0..cols).collect();
    let mut reflectors: Vec<(usize, Vec<f64>, f64)> = Vec::with_capacity(steps);
    let mut diag = Vec::with_capacity(steps);

    for j in 0..steps {
        let (best, _) = (j..cols)
            .map(|c| (c, a.view((j, c), (rows - j, 1)).norm_squared()))
            .fold((j, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best != j {
            a.swap_columns(j, best);
            perm.swap(j, best);
        }
        let x = a.view((j, j), (rows - j, 1)).clone_owned();
        let alpha = x.norm();
        if alpha == 0.0 {
            diag.push(0.0);
            reflectors.push((j, vec![0.0; rows - j], 0.0));
            continue;
        }
        // Reflector mapping x to -sign(x0)·alpha·e1; sign fixed afterwards.
        let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        let mut v: Vec<f64> = x.iter().cloned().collect();
        v[0] += sign * alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        let beta = 2.0 / vnorm2;
        for c in j..cols {
            let dot: f64 = (0..rows - j).map(|i| v[i] * a[(j + i, c)]).sum();
            let f = beta * dot;
            for i in 0..rows - j {
                a[(j + i, c)] -= f * v[i];
            }
        }
        diag.push(a[(j, j)]);
        reflectors.push((j, v, beta));
    }

    let dmax = diag.first().map(|d| d.abs()).unwrap_or(0.0);
    let rank = if dmax == 0.0 {
        0
    } else {
        diag.iter().take_while(|d| d.abs() >= rank_tol * dmax).count()
    };

    // Accumulate the first `rank` columns of Q.
    let mut q = DMatrix::<f64>::zeros(rows, rank);
    for i in 0..rank {
        q[(i, i)] = 1.0;
    }
    for (j, v, beta) in reflectors.iter().rev() {
        if *beta == 0.0 {
            continue;
        }
        for c in 0..rank {
            let dot: f64 = (0..rows - j).map(|i| v[i] * q[(j + i, c)]).sum();
            let f = beta * dot;
            for i in 0..rows - j {
                q[(j + i, c)] -= f * v[i];
            }
        }
    }
    let mut r = DMatrix::<f64>::zeros(rank, rank);
    for i in 0..rank {
        for c in i..rank {
            r[(i, c)] = a[(i, c)];
        }
    }
    for i in 0..rank {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    ColPivQr {
        pivots: perm,
        diag: diag.iter().map(|d| d.abs()).collect(),
        rank,
        q,
        r,
    }
}
