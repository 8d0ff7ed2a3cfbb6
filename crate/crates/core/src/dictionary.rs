//! Observable dictionaries: JSON description, batch evaluation and preconditioning.

use crate::error::{Error, Result};
use crate::linalg::{col_piv_qr, orthonormality_residual, solve_upper, thin_qr};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// A scalar function of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Observable {
    Monomial { exponents: Vec<u32> },
    /// `exp(−‖x − c‖² / (2·width²))`.
    GaussianRbf { center: Vec<f64>, width: f64 },
    /// C² Wendland kernel `(1 − r/ρ)⁴·(4r/ρ + 1)` for `r ≤ ρ`, zero outside.
    Wendland { center: Vec<f64>, support_radius: f64 },
    Coordinate { index: usize },
    Constant,
}

impl Observable {
    fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self {
            Observable::Monomial { exponents } if exponents.len() != n => {
                bad(format!("monomial with {} exponents in dimension {n}", exponents.len()))
            }
            Observable::GaussianRbf { center, width } => {
                if center.len() != n {
                    bad(format!("rbf center of length {} in dimension {n}", center.len()))
                } else if !(*width > 0.0 && width.is_finite()) {
                    bad(format!("rbf width must be positive, got {width}"))
                } else {
                    Ok(())
                }
            }
            Observable::Wendland { center, support_radius } => {
                if center.len() != n {
                    bad(format!("wendland center of length {} in dimension {n}", center.len()))
                } else if !(*support_radius > 0.0 && support_radius.is_finite()) {
                    bad(format!("wendland support radius must be positive, got {support_radius}"))
                } else {
                    Ok(())
                }
            }
            Observable::Coordinate { index } if *index >= n => {
                bad(format!("coordinate index {index} in dimension {n}"))
            }
            _ => Ok(()),
        }
    }

    /// Value at a single state (length already checked by the caller).
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Observable::Monomial { exponents } => exponents
                .iter()
                .zip(x)
                .map(|(&e, &v)| v.powi(e as i32))
                .product(),
            Observable::GaussianRbf { center, width } => {
                let r2 = sq_dist(x, center);
                (-r2 / (2.0 * width * width)).exp()
            }
            Observable::Wendland { center, support_radius } => {
                let r = sq_dist(x, center).sqrt() / support_radius;
                if r >= 1.0 {
                    0.0
                } else {
                    (1.0 - r).powi(4) * (4.0 * r + 1.0)
                }
            }
            Observable::Coordinate { index } => x[*index],
            Observable::Constant => 1.0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Shorthand expanded into observables when a dictionary document is loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Generator {
    /// Every monomial of total degree `≤ max_degree`, graded order.
    Monomials { max_degree: u32 },
    GaussianGrid { lower: Vec<f64>, upper: Vec<f64>, spacing: f64, width: f64 },
    WendlandGrid { lower: Vec<f64>, upper: Vec<f64>, spacing: f64, support_radius: f64 },
}

/// On-disk form of a dictionary: explicit observables plus optional generators.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryDoc {
    pub state_dim: usize,
    #[serde(default)]
    pub observables: Vec<Observable>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generators: Vec<Generator>,
}

/// Ordered observables sharing one state dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DictionaryDoc", into = "DictionaryDoc")]
pub struct Dictionary {
    state_dim: usize,
    observables: Vec<Observable>,
}

impl TryFrom<DictionaryDoc> for Dictionary {
    type Error = Error;

    fn try_from(doc: DictionaryDoc) -> Result<Self> {
        let mut observables = doc.observables;
        for g in &doc.generators {
            observables.extend(expand(g, doc.state_dim)?);
        }
        Dictionary::new(doc.state_dim, observables)
    }
}

impl From<Dictionary> for DictionaryDoc {
    fn from(d: Dictionary) -> Self {
        DictionaryDoc {
            state_dim: d.state_dim,
            observables: d.observables,
            generators: Vec::new(),
        }
    }
}

/// Upper bound on generated observables, so a malformed document cannot exhaust memory.
const MAX_GENERATED: usize = 1 << 20;

fn expand(g: &Generator, n: usize) -> Result<Vec<Observable>> {
    match g {
        Generator::Monomials { max_degree } => {
            let mut out = Vec::new();
            for deg in 0..=*max_degree {
                let mut exps = vec![0u32; n];
                compositions(deg, 0, &mut exps, &mut out)?;
            }
            Ok(out)
        }
        Generator::GaussianGrid { lower, upper, spacing, width } => Ok(grid(lower, upper, *spacing, n)?
            .into_iter()
            .map(|center| Observable::GaussianRbf { center, width: *width })
            .collect()),
        Generator::WendlandGrid { lower, upper, spacing, support_radius } => Ok(grid(lower, upper, *spacing, n)?
            .into_iter()
            .map(|center| Observable::Wendland { center, support_radius: *support_radius })
            .collect()),
    }
}

fn compositions(rem: u32, pos: usize, exps: &mut Vec<u32>, out: &mut Vec<Observable>) -> Result<()> {
    if out.len() > MAX_GENERATED {
        return Err(Error::InvalidConfig("monomial generator is too large".into()));
    }
    if exps.is_empty() {
        return Ok(());
    }
    if pos + 1 == exps.len() {
        exps[pos] = rem;
        out.push(Observable::Monomial { exponents: exps.clone() });
        return Ok(());
    }
    for e in (0..=rem).rev() {
        exps[pos] = e;
        compositions(rem - e, pos + 1, exps, out)?;
    }
    exps[pos] = 0;
    Ok(())
}

fn grid(lower: &[f64], upper: &[f64], spacing: f64, n: usize) -> Result<Vec<Vec<f64>>> {
    if lower.len() != n || upper.len() != n {
        return Err(Error::InvalidConfig(format!("grid bounds must have length {n}")));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidConfig(format!("grid spacing must be positive, got {spacing}")));
    }
    let mut axes = Vec::with_capacity(n);
    let mut total = 1usize;
    for (&lo, &hi) in lower.iter().zip(upper) {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidConfig(format!("empty grid axis [{lo}, {hi}]")));
        }
        let count = ((hi - lo) / spacing + 1e-9).floor() + 1.0;
        if count > MAX_GENERATED as f64 {
            return Err(Error::InvalidConfig("grid generator is too large".into()));
        }
        let count = count as usize;
        total = total.saturating_mul(count);
        if total > MAX_GENERATED {
            return Err(Error::InvalidConfig("grid generator is too large".into()));
        }
        axes.push((0..count).map(|i| lo + i as f64 * spacing).collect::<Vec<_>>());
    }
    // Last axis varies fastest.
    let mut points = vec![Vec::with_capacity(n)];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

impl Dictionary {
    pub fn new(state_dim: usize, observables: Vec<Observable>) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::InvalidConfig("state dimension must be positive".into()));
        }
        if observables.is_empty() {
            return Err(Error::InvalidConfig("dictionary must contain at least one observable".into()));
        }
        for o in &observables {
            o.validate(state_dim)?;
        }
        Ok(Self { state_dim, observables })
    }

    pub fn from_generators(state_dim: usize, generators: &[Generator]) -> Result<Self> {
        DictionaryDoc {
            state_dim,
            observables: Vec::new(),
            generators: generators.to_vec(),
        }
        .try_into()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DictionaryDoc = serde_json::from_str(text)?;
        doc.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dictionary serializes")
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    /// `Ψ(X)`: entry `(i, j)` is `ψ_j(x_i)`.
    pub fn evaluate(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.state_dim {
            return Err(Error::DimensionMismatch(format!(
                "data has {} columns, dictionary expects {}",
                x.ncols(),
                self.state_dim
            )));
        }
        let mut out = DMatrix::zeros(x.nrows(), self.len());
        let mut row = vec![0.0; self.state_dim];
        for i in 0..x.nrows() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = x[(i, k)];
            }
            for (j, o) in self.observables.iter().enumerate() {
                out[(i, j)] = o.eval(&row);
            }
        }
        Ok(out)
    }

    /// Dictionary values at one state.
    pub fn evaluate_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim {
            return Err(Error::DimensionMismatch(format!(
                "state of length {}, dictionary expects {}",
                x.len(),
                self.state_dim
            )));
        }
        Ok(self.observables.iter().map(|o| o.eval(x)).collect())
    }
}

/// Output of [`precondition`].
#[derive(Debug, Clone)]
pub struct Preconditioned {
    /// Raw-dictionary coefficients (s₀×s) of an empirically orthonormal basis.
    pub basis_coeff: DMatrix<f64>,
    pub retained_dim: usize,
    /// Raw-dictionary indices selected by the pivoted QR, in pivot order.
    pub pivots: Vec<usize>,
}

/// Select well-conditioned dictionary directions and orthonormalize them on `x`.
///
/// Directions are chosen by column-pivoted QR on the scaled evaluations; pivots
/// with `|r_ii| < rank_tol·|r_11|` are discarded. `max_dim` caps the number of
/// retained pivots. The selected columns are orthonormalized twice; if the
/// empirical Gram matrix still misses the identity by more than 1e-8, the
/// threshold is raised by factors of ten until it does.
pub fn precondition(
    dict: &Dictionary,
    x: &DMatrix<f64>,
    rank_tol: f64,
    max_dim: Option<usize>,
) -> Result<Preconditioned> {
    if !(rank_tol > 0.0) {
        return Err(Error::InvalidConfig(format!("rank_tol must be positive, got {rank_tol}")));
    }
    let n = x.nrows();
    if n == 0 {
        return Err(Error::DegenerateData("no samples".into()));
    }
    let scaled = dict.evaluate(x)? / (n as f64).sqrt();
    let cp = col_piv_qr(&scaled, rank_tol);
    if cp.rank == 0 {
        return Err(Error::DegenerateData("every dictionary function vanishes on the data".into()));
    }
    let cap = max_dim.map_or(cp.rank, |m| m.min(cp.rank)).max(1);
    let r11 = cp.diag[0];

    // Rounding in `Ψ(X)·coeff` grows with the conditioning of the retained
    // block, so if the Gram check fails the pivot threshold is raised by a
    // decade at a time until it passes.
    let mut threshold = rank_tol;
    loop {
        let s = cp.diag[..cap].iter().take_while(|&&d| d >= threshold * r11).count().max(1);
        let pivots: Vec<usize> = cp.pivots[..s].to_vec();
        let (coeff, resid) = orthonormalize(&scaled, &pivots)?;
        if resid.is_finite() && resid <= GRAM_TOL {
            let mut basis_coeff = DMatrix::zeros(dict.len(), s);
            for (j, &p) in pivots.iter().enumerate() {
                basis_coeff.set_row(p, &coeff.row(j));
            }
            return Ok(Preconditioned { basis_coeff, retained_dim: s, pivots });
        }
        if s == 1 || threshold >= 1e-2 {
            return Err(Error::DegenerateData(format!(
                "preconditioned basis is not orthonormal (residual {resid:.3e})"
            )));
        }
        threshold *= 10.0;
    }
}

/// Frobenius tolerance on the empirical Gram matrix of a preconditioned basis.
const GRAM_TOL: f64 = 1e-8;

/// Coefficients making the selected columns orthonormal (two passes) and the residual.
fn orthonormalize(scaled: &DMatrix<f64>, pivots: &[usize]) -> Result<(DMatrix<f64>, f64)> {
    let s = pivots.len();
    let selected = DMatrix::from_fn(scaled.nrows(), s, |i, j| scaled[(i, pivots[j])]);
    let mut coeff = DMatrix::identity(s, s);
    let mut current = selected.clone();
    for _ in 0..2 {
        let qr = thin_qr(&current)?;
        let rinv = solve_upper(&qr.r, &DMatrix::identity(s, s))?;
        coeff *= rinv;
        current = &selected * &coeff;
    }
    Ok((coeff, orthonormality_residual(&current)))
}
