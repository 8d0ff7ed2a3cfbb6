//! Benchmark dynamical systems and deterministic snapshot generation.
//!
//! Initial conditions come from `ChaCha8Rng::seed_from_u64(seed)` with the
//! stream set to the trajectory index, each coordinate drawn as
//! `lower + (upper − lower)·u` with `u` uniform on `[0, 1)`. Trajectories are
//! therefore reproducible individually and independent of generation order.

use crate::dictionary::DictionaryDoc;
use crate::error::{Error, Result};
use crate::formats::SnapshotSet;
use crate::pruning::PruneConfig;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// `x₁⁺ = 0.8·x₁`, `x₂⁺ = √(0.9·x₂² + x₁ + 0.1)`.
///
/// Its exact eigenfunctions are `1`, `x₁`, `x₁²` and `1 − 10x₁ − x₂²` with
/// eigenvalues `1`, `0.8`, `0.64` and `0.9`.
pub fn step_benchmark2d(x: &[f64]) -> Result<[f64; 2]> {
    let (x1, x2) = (x[0], x[1]);
    let radicand = 0.9 * x2 * x2 + x1 + 0.1;
    if !(radicand >= 0.0) {
        return Err(Error::NegativeRadicand { radicand, x1, x2 });
    }
    Ok([0.8 * x1, radicand.sqrt()])
}

/// Forward-Euler Van der Pol oscillator with step `dt`.
pub fn step_van_der_pol(x: &[f64], dt: f64) -> [f64; 2] {
    let (x1, x2) = (x[0], x[1]);
    [x1 + dt * x2, x2 + dt * ((1.0 - x1 * x1) * x2 - x1)]
}

/// The planted eigenfunctions of [`step_benchmark2d`] and their eigenvalues.
pub fn benchmark2d_eigenfunctions() -> [(fn(&[f64]) -> f64, f64); 4] {
    [
        (|_| 1.0, 1.0),
        (|x| x[0], 0.8),
        (|x| x[0] * x[0], 0.64),
        (|x| 1.0 - 10.0 * x[0] - x[1] * x[1], 0.9),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemKind {
    Benchmark2d,
    VanDerPol { dt: f64 },
    /// A named map from the built-in registry (see [`SystemKind::step`]).
    Custom { name: String },
}

impl SystemKind {
    pub fn state_dim(&self) -> Result<usize> {
        match self {
            SystemKind::Custom { name } => custom_map(name).map(|m| m.0),
            _ => Ok(2),
        }
    }

    /// Apply the map once. Custom names: `linear_contraction` (`x⁺ = 0.5·x`,
    /// any dimension) and `duffing_euler` (Euler step 0.01 of
    /// `ẍ = x − x³ − 0.5ẋ`).
    pub fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            SystemKind::Benchmark2d => Ok(step_benchmark2d(x)?.to_vec()),
            SystemKind::VanDerPol { dt } => Ok(step_van_der_pol(x, *dt).to_vec()),
            SystemKind::Custom { name } => Ok((custom_map(name)?.1)(x)),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SystemKind::VanDerPol { dt } if !(*dt > 0.0 && dt.is_finite()) => {
                Err(Error::InvalidConfig(format!("van der pol dt must be positive, got {dt}")))
            }
            SystemKind::Custom { name } => custom_map(name).map(|_| ()),
            _ => Ok(()),
        }
    }
}

type StepFn = fn(&[f64]) -> Vec<f64>;

fn custom_map(name: &str) -> Result<(usize, StepFn)> {
    match name {
        "linear_contraction" => Ok((2, |x| x.iter().map(|v| 0.5 * v).collect())),
        "duffing_euler" => Ok((2, |x| {
            let h = 0.01;
            vec![x[0] + h * x[1], x[1] + h * (x[0] - x[0].powi(3) - 0.5 * x[1])]
        })),
        other => Err(Error::InvalidConfig(format!("unknown custom system `{other}`"))),
    }
}

/// Axis-aligned sampling box for initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(flatten)]
    pub kind: SystemKind,
    pub domain: Domain,
    #[serde(default)]
    pub seed: u64,
}

impl SystemSpec {
    pub fn benchmark2d(seed: u64) -> Self {
        Self {
            kind: SystemKind::Benchmark2d,
            domain: Domain { lower: vec![0.0, 0.0], upper: vec![2.0, 2.0] },
            seed,
        }
    }

    pub fn van_der_pol(seed: u64) -> Self {
        Self {
            kind: SystemKind::VanDerPol { dt: 0.025 },
            domain: Domain { lower: vec![-4.0, -4.0], upper: vec![4.0, 4.0] },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        let n = self.kind.state_dim()?;
        let d = &self.domain;
        if d.lower.len() != n || d.upper.len() != n {
            return Err(Error::InvalidConfig(format!("domain must have {n} coordinates")));
        }
        if d.lower.iter().zip(&d.upper).any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
            return Err(Error::InvalidConfig("domain box is empty or unbounded".into()));
        }
        Ok(())
    }

    /// Initial condition of trajectory `index`.
    pub fn initial_condition(&self, index: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        self.domain
            .lower
            .iter()
            .zip(&self.domain.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

/// Dictionary given inline or as a path to a dictionary JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DictionarySource {
    Path(String),
    Inline(DictionaryDoc),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionSpec {
    pub x0: Vec<f64>,
    pub horizon: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub n_traj: usize,
    pub traj_len: usize,
    #[serde(default)]
    pub dictionary: Option<DictionarySource>,
    #[serde(default)]
    pub prune: Option<PruneConfig>,
    #[serde(default)]
    pub prediction: Option<PredictionSpec>,
}

impl ExperimentConfig {
    pub fn new(system: SystemSpec, n_traj: usize, traj_len: usize) -> Self {
        Self { system, n_traj, traj_len, dictionary: None, prune: None, prediction: None }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if self.n_traj == 0 || self.traj_len == 0 {
            return Err(Error::InvalidConfig("n_traj and traj_len must be positive".into()));
        }
        if self.n_traj.checked_mul(self.traj_len).is_none_or(|n| n > 1 << 28) {
            return Err(Error::InvalidConfig("requested data set is too large".into()));
        }
        if let Some(p) = &self.prune {
            p.validate()?;
        }
        Ok(())
    }
}

/// `n_traj` trajectories of `traj_len` steps; pairs are consecutive states.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<SnapshotSet> {
    cfg.validate()?;
    let n = cfg.system.kind.state_dim()?;
    let total = cfg.n_traj * cfg.traj_len;
    let mut xs = Vec::with_capacity(total * n);
    let mut xps = Vec::with_capacity(total * n);
    for t in 0..cfg.n_traj {
        let mut x = cfg.system.initial_condition(t as u64);
        for _ in 0..cfg.traj_len {
            let next = cfg.system.kind.step(&x)?;
            xs.extend_from_slice(&x);
            xps.extend_from_slice(&next);
            x = next;
        }
    }
    SnapshotSet::new(
        DMatrix::from_row_slice(total, n, &xs),
        DMatrix::from_row_slice(total, n, &xps),
    )
}

/// States `x₀, …, x_steps` (steps + 1 rows).
pub fn simulate(kind: &SystemKind, x0: &[f64], steps: usize) -> Result<DMatrix<f64>> {
    let n = kind.state_dim()?;
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!("initial state of length {}, expected {n}", x0.len())));
    }
    let mut out = DMatrix::zeros(steps + 1, n);
    let mut x = x0.to_vec();
    for t in 0..=steps {
        for (j, v) in x.iter().enumerate() {
            out[(t, j)] = *v;
        }
        if t < steps {
            x = kind.step(&x)?;
        }
    }
    Ok(out)
}
