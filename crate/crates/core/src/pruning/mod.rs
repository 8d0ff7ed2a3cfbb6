//! Principal-vector pruning: single (SPV), multiple (MPV) and hybrid.
//!
//! Every algorithm walks a chain of nested subspaces `S₀ ⊃ S₁ ⊃ …`, dropping
//! principal vectors of `S` with the largest angles to `KS` until the
//! invariance proximity falls to the tolerance. Failure (the empty subspace) is
//! a regular outcome that keeps the full trace.

mod fast;

pub use fast::fast_recompute;

use crate::dictionary::{precondition, Dictionary};
use crate::error::{Error, Result};
use crate::formats::{opt_matrix, SnapshotSet};
use crate::koopman::{invariance_proximity, principal_arguments, DictionaryData, PrincipalArguments};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

/// Current subspace with its principal arguments and the data it lives on.
#[derive(Debug, Clone)]
pub struct SubspaceState {
    pub args: PrincipalArguments,
    pub generation: usize,
    source: Arc<DictionaryData>,
}

impl SubspaceState {
    /// Principal arguments of `span(basis_coeff)` computed from scratch.
    pub fn from_basis(source: Arc<DictionaryData>, basis_coeff: &DMatrix<f64>) -> Result<Self> {
        let lifted = source.lift(basis_coeff)?;
        let args = principal_arguments(&lifted)?;
        Ok(Self { args, generation: 0, source })
    }

    /// Evaluate `dict` on the snapshots, precondition it, and compute the
    /// initial principal arguments.
    pub fn initial(dict: &Dictionary, data: &SnapshotSet, rank_tol: f64, max_dim: Option<usize>) -> Result<Self> {
        let source = Arc::new(DictionaryData::new(dict, &data.x, &data.x_plus)?);
        let pre = precondition(dict, &data.x, rank_tol, max_dim)?;
        Self::from_basis(source, &pre.basis_coeff)
    }

    pub fn dim(&self) -> usize {
        self.args.dim()
    }

    pub fn delta(&self) -> f64 {
        invariance_proximity(&self.args)
    }

    pub fn source(&self) -> &Arc<DictionaryData> {
        &self.source
    }

    /// Current basis (principal vectors) in raw-dictionary coordinates.
    pub fn basis_coeff(&self) -> &DMatrix<f64> {
        &self.args.u_coeff
    }

    /// From-scratch principal arguments of the span of the first `keep` principal vectors.
    pub fn recompute_naive(&self, keep: usize) -> Result<Self> {
        let coeff = self.args.u_coeff.columns(0, keep).into_owned();
        let mut next = Self::from_basis(Arc::clone(&self.source), &coeff)?;
        next.generation = self.generation;
        Ok(next)
    }

    fn with_args(&self, args: PrincipalArguments) -> Self {
        Self { args, generation: self.generation, source: Arc::clone(&self.source) }
    }
}

/// Which trace entries carry the basis coefficients of their subspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RecordPolicy {
    FinalOnly,
    All,
    /// Entries whose invariance proximity is at most the given value.
    DeltaAtMost(f64),
}

impl Default for RecordPolicy {
    fn default() -> Self {
        RecordPolicy::DeltaAtMost(DEFAULT_RECORD_DELTA)
    }
}

impl RecordPolicy {
    fn wants(&self, delta: Option<f64>) -> bool {
        match *self {
            RecordPolicy::FinalOnly => false,
            RecordPolicy::All => true,
            RecordPolicy::DeltaAtMost(limit) => delta.is_some_and(|d| d <= limit),
        }
    }
}

/// Default cut-off for recording nested bases in the trace.
pub const DEFAULT_RECORD_DELTA: f64 = 0.1;

/// Default coarse tolerance of the hybrid algorithm.
pub const DEFAULT_EPS_COARSE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Spv,
    Mpv,
    Hybrid,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spv" => Ok(Algorithm::Spv),
            "mpv" => Ok(Algorithm::Mpv),
            "hybrid" => Ok(Algorithm::Hybrid),
            other => Err(Error::InvalidConfig(format!("unknown algorithm `{other}`"))),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub eps: f64,
    /// Coarse tolerance of the hybrid MPV stage; [`DEFAULT_EPS_COARSE`] if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_coarse: Option<f64>,
    #[serde(default = "default_true")]
    pub use_fast_path: bool,
    /// Every `p`-th generation recompute from scratch, record the discrepancy
    /// and continue from the fresh result. 0 disables the check.
    #[serde(default)]
    pub oracle_check_period: usize,
    #[serde(default)]
    pub record: RecordPolicy,
    /// Record wall-clock seconds per generation (makes reports non-reproducible).
    #[serde(default)]
    pub timings: bool,
}

impl PruneConfig {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            eps_coarse: None,
            use_fast_path: true,
            oracle_check_period: 0,
            record: RecordPolicy::default(),
            timings: false,
        }
    }

    pub fn naive(mut self) -> Self {
        self.use_fast_path = false;
        self
    }

    pub fn with_eps_coarse(mut self, eps_coarse: f64) -> Self {
        self.eps_coarse = Some(eps_coarse);
        self
    }

    pub fn eps_coarse(&self) -> f64 {
        self.eps_coarse.unwrap_or(DEFAULT_EPS_COARSE)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eps) {
            return Err(Error::InvalidConfig(format!("eps must lie in [0, 1), got {}", self.eps)));
        }
        if let Some(c) = self.eps_coarse {
            if !(c > self.eps && c <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "eps_coarse must lie in (eps, 1], got {c} with eps = {}",
                    self.eps
                )));
            }
        }
        if let RecordPolicy::DeltaAtMost(v) = self.record {
            if !(v >= 0.0) {
                return Err(Error::InvalidConfig(format!("record threshold must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputePath {
    Naive,
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneMode {
    pub algorithm: Algorithm,
    pub path: ComputePath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initial,
    Spv,
    Mpv,
}

/// One generation of a pruning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub generation: usize,
    pub dim: usize,
    /// Invariance proximity after this generation's recomputation; absent for the empty subspace.
    pub delta: Option<f64>,
    /// Smallest sine among the directions dropped to reach this generation.
    pub gamma: Option<f64>,
    pub dropped_count: usize,
    pub stage: Stage,
    /// Tolerance that triggered the drop.
    pub eps: Option<f64>,
    /// Max-abs difference between incremental and from-scratch sines, when checked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_discrepancy: Option<f64>,
    /// The incremental update failed and this generation was recomputed from scratch.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
    /// Basis of this subspace in raw-dictionary coordinates (s₀×dim).
    #[serde(default, with = "opt_matrix", skip_serializing_if = "Option::is_none")]
    pub basis_coeff: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

/// Schema version written into every serialized report.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Result of a pruning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneReport {
    pub schema_version: u32,
    pub mode: PruneMode,
    pub config: PruneConfig,
    pub trace: Vec<TraceEntry>,
    pub outcome: Outcome,
    /// Dimension of the image of the initial subspace, when smaller than the subspace itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_deficiency: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<Dictionary>,
    /// Final subspace on success; not serialized (the last trace entry carries its basis).
    #[serde(skip)]
    pub final_state: Option<SubspaceState>,
}

impl PruneReport {
    pub fn is_success(&self) -> bool {
        self.outcome == Outcome::Success
    }

    pub fn final_dim(&self) -> usize {
        self.trace.last().map_or(0, |e| e.dim)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported report schema version {}", report.schema_version)));
        }
        Ok(report)
    }

    /// Trace entry of the given dimension that carries a basis.
    pub fn basis_for_dim(&self, dim: usize) -> Option<&DMatrix<f64>> {
        self.trace.iter().find(|e| e.dim == dim).and_then(|e| e.basis_coeff.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DropRule {
    Single,
    AllAbove,
}

struct Runner<'a> {
    config: &'a PruneConfig,
    trace: Vec<TraceEntry>,
}

impl Runner<'_> {
    fn entry(&self, state: &SubspaceState, stage: Stage, eps: Option<f64>) -> TraceEntry {
        let delta = state.delta();
        TraceEntry {
            generation: state.generation,
            dim: state.dim(),
            delta: Some(delta),
            gamma: None,
            dropped_count: 0,
            stage,
            eps,
            oracle_discrepancy: None,
            fallback: false,
            seconds: None,
            basis_coeff: self.config.record.wants(Some(delta)).then(|| state.basis_coeff().clone()),
        }
    }

    /// Prune until `δ ≤ eps`; `None` means the subspace became empty.
    fn stage(&mut self, mut state: SubspaceState, eps: f64, rule: DropRule) -> Result<Option<SubspaceState>> {
        let stage = match rule {
            DropRule::Single => Stage::Spv,
            DropRule::AllAbove => Stage::Mpv,
        };
        loop {
            let s = state.dim();
            if state.delta() <= eps {
                return Ok(Some(state));
            }
            let started = Instant::now();
            // Ties at eps are retained.
            let k = match rule {
                DropRule::Single => 1,
                DropRule::AllAbove => state.args.sines.iter().filter(|&&v| v > eps).count().max(1),
            };
            let gamma = state.args.sines[s - k];
            let generation = state.generation + 1;
            if k == s {
                self.trace.push(TraceEntry {
                    generation,
                    dim: 0,
                    delta: None,
                    gamma: Some(gamma),
                    dropped_count: k,
                    stage,
                    eps: Some(eps),
                    oracle_discrepancy: None,
                    fallback: false,
                    seconds: self.config.timings.then(|| started.elapsed().as_secs_f64()),
                    basis_coeff: None,
                });
                return Ok(None);
            }

            let mut fallback = false;
            let mut next = if self.config.use_fast_path {
                match fast_recompute(&state.args, k) {
                    Ok(args) => state.with_args(args),
                    Err(Error::RankDeficientUpdate(_)) => {
                        fallback = true;
                        state.recompute_naive(s - k)?
                    }
                    Err(e) => return Err(e),
                }
            } else {
                state.recompute_naive(s - k)?
            };
            next.generation = generation;

            let mut discrepancy = None;
            let period = self.config.oracle_check_period;
            if period > 0 && generation % period == 0 {
                let fresh = next.recompute_naive(s - k)?;
                discrepancy = Some(max_abs_diff(&next.args.sines, &fresh.args.sines));
                next = fresh;
            }

            let mut e = self.entry(&next, stage, Some(eps));
            e.gamma = Some(gamma);
            e.dropped_count = k;
            e.oracle_discrepancy = discrepancy;
            e.fallback = fallback;
            e.seconds = self.config.timings.then(|| started.elapsed().as_secs_f64());
            self.trace.push(e);
            state = next;
        }
    }
}

fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn run(state: SubspaceState, config: &PruneConfig, algorithm: Algorithm) -> Result<PruneReport> {
    config.validate()?;
    if algorithm == Algorithm::Hybrid && config.eps_coarse() <= config.eps {
        return Err(Error::InvalidConfig("eps_coarse must exceed eps".into()));
    }
    let mut runner = Runner { config, trace: Vec::new() };
    let first = runner.entry(&state, Stage::Initial, None);
    runner.trace.push(first);
    let image_deficiency = (state.args.image_rank < state.dim()).then_some(state.args.image_rank);

    let end = match algorithm {
        Algorithm::Spv => runner.stage(state, config.eps, DropRule::Single)?,
        Algorithm::Mpv => runner.stage(state, config.eps, DropRule::AllAbove)?,
        Algorithm::Hybrid => match runner.stage(state, config.eps_coarse(), DropRule::AllAbove)? {
            Some(coarse) => runner.stage(coarse, config.eps, DropRule::Single)?,
            None => None,
        },
    };

    let mut trace = runner.trace;
    if let (Some(state), Some(last)) = (&end, trace.last_mut()) {
        last.basis_coeff = Some(state.basis_coeff().clone());
    }
    let dictionary = end.as_ref().map(|s| s.source().dict.clone());
    Ok(PruneReport {
        schema_version: REPORT_SCHEMA_VERSION,
        mode: PruneMode {
            algorithm,
            path: if config.use_fast_path { ComputePath::Fast } else { ComputePath::Naive },
        },
        config: config.clone(),
        trace,
        outcome: if end.is_some() { Outcome::Success } else { Outcome::Failure },
        image_deficiency,
        dictionary,
        final_state: end,
    })
}

/// Drop the single worst principal vector per generation.
pub fn spv_prune(state: SubspaceState, config: &PruneConfig) -> Result<PruneReport> {
    run(state, config, Algorithm::Spv)
}

/// Drop every principal vector with `sin θ > eps` per generation.
pub fn mpv_prune(state: SubspaceState, config: &PruneConfig) -> Result<PruneReport> {
    run(state, config, Algorithm::Mpv)
}

/// MPV at `eps_coarse`, then SPV at `eps`.
pub fn hybrid_prune(state: SubspaceState, config: &PruneConfig) -> Result<PruneReport> {
    run(state, config, Algorithm::Hybrid)
}

pub fn prune(state: SubspaceState, config: &PruneConfig, algorithm: Algorithm) -> Result<PruneReport> {
    run(state, config, algorithm)
}

/// Empirical-L₂ distance from the normalized function `f` (raw-dictionary
/// coefficients) to the current subspace.
pub fn eigenfunction_distance(f_coeff: &DVector<f64>, state: &SubspaceState) -> Result<f64> {
    let psi = &state.source().psi_x;
    if f_coeff.len() != psi.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "function has {} coefficients for a dictionary of {}",
            f_coeff.len(),
            psi.ncols()
        )));
    }
    distance_to_span(&(psi * f_coeff), &state.args.u_eval())
}

/// `‖(I − UUᵀ) f‖ / ‖f‖` for orthonormal `U`.
pub fn distance_to_span(f_eval: &DVector<f64>, u: &DMatrix<f64>) -> Result<f64> {
    let norm = f_eval.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroFunction);
    }
    let f = f_eval / norm;
    let resid = &f - u * u.tr_mul(&f);
    Ok(resid.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Generator;
    use crate::linalg::{max_subspace_angle, thin_qr};
    use crate::systems::{generate_data, ExperimentConfig, SystemSpec};
    use crate::testutil::{gaussian, planted_coeffs, random_lifted, rng, synthetic_source};
    use proptest::prelude::*;

    fn random_state(seed: u64, n: usize, s: usize, noise: f64) -> SubspaceState {
        let l = random_lifted(seed, n, s, noise);
        SubspaceState::from_basis(synthetic_source(l.a, l.b), &DMatrix::identity(s, s)).unwrap()
    }

    fn all_algorithms() -> [Algorithm; 3] {
        [Algorithm::Spv, Algorithm::Mpv, Algorithm::Hybrid]
    }

    fn check_trace(rep: &PruneReport) {
        let dims: Vec<usize> = rep.trace.iter().map(|e| e.dim).collect();
        assert!(dims.windows(2).all(|w| w[0] > w[1]), "dims {dims:?}");
        assert!(rep.trace.len() <= dims[0] + 1);
        for e in &rep.trace[1..] {
            assert!(e.dropped_count >= 1);
            if e.stage == Stage::Spv {
                assert_eq!(e.dropped_count, 1);
            }
            assert!(e.gamma.unwrap() > e.eps.unwrap());
        }
        match rep.outcome {
            Outcome::Success => assert!(rep.trace.last().unwrap().delta.unwrap() <= rep.config.eps),
            Outcome::Failure => assert_eq!(rep.final_dim(), 0),
        }
    }

    #[test]
    fn already_invariant_input_is_returned_unchanged() {
        let l = random_lifted(1, 60, 4, 0.0);
        let st = SubspaceState::from_basis(synthetic_source(l.a.clone(), l.a), &DMatrix::identity(4, 4)).unwrap();
        for algo in all_algorithms() {
            let rep = prune(st.clone(), &PruneConfig::new(1e-3), algo).unwrap();
            assert_eq!(rep.trace.len(), 1);
            assert!(rep.is_success());
            assert_eq!(rep.final_dim(), 4);
        }
    }

    #[test]
    fn orthogonally_mapped_function_is_dropped() {
        let mut r = rng(2);
        let q = thin_qr(&gaussian(&mut r, 40, 3)).unwrap().q;
        let a = q.columns(0, 2).into_owned();
        let mut b = a.clone();
        b.set_column(1, &q.column(2));
        let st = SubspaceState::from_basis(synthetic_source(a, b), &DMatrix::identity(2, 2)).unwrap();
        for fast in [true, false] {
            let mut cfg = PruneConfig::new(0.5);
            cfg.use_fast_path = fast;
            let rep = spv_prune(st.clone(), &cfg).unwrap();
            assert_eq!(rep.trace.len(), 2);
            assert_eq!(rep.final_dim(), 1);
            assert!(rep.trace[1].delta.unwrap() < 1e-10);
            assert!((rep.trace[1].gamma.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    fn eigen_plus_junk() -> (SubspaceState, DMatrix<f64>) {
        let dict = Dictionary::from_generators(2, &[Generator::Monomials { max_degree: 3 }]).unwrap();
        let data = generate_data(&ExperimentConfig::new(SystemSpec::benchmark2d(5), 40, 25)).unwrap();
        let planted = planted_coeffs(&dict);
        let mut r = rng(3);
        let mut basis = DMatrix::zeros(dict.len(), 7);
        basis.columns_mut(0, 4).copy_from(&planted);
        basis.columns_mut(4, 3).copy_from(&gaussian(&mut r, dict.len(), 3));
        let source = Arc::new(DictionaryData::new(&dict, &data.x, &data.x_plus).unwrap());
        (SubspaceState::from_basis(source, &basis).unwrap(), planted)
    }

    #[test]
    fn planted_eigenfunctions_survive_every_algorithm() {
        let (st, planted) = eigen_plus_junk();
        assert!(st.delta() > 1e-3);
        for algo in all_algorithms() {
            for fast in [true, false] {
                let mut cfg = PruneConfig::new(1e-3);
                cfg.use_fast_path = fast;
                let rep = prune(st.clone(), &cfg, algo).unwrap();
                check_trace(&rep);
                let fin = rep.final_state.as_ref().expect("success");
                assert!(fin.dim() >= 4);
                for j in 0..4 {
                    let d = eigenfunction_distance(&planted.column(j).into_owned(), fin).unwrap();
                    assert!(d < 1e-6, "{algo:?} fast={fast} eigenfunction {j}: {d}");
                }
            }
        }
    }

    #[test]
    fn total_violation_fails_in_one_generation() {
        let mut r = rng(4);
        let q = thin_qr(&gaussian(&mut r, 50, 6)).unwrap().q;
        let a = q.columns(0, 3).into_owned();
        let b = q.columns(3, 3).into_owned();
        let st = SubspaceState::from_basis(synthetic_source(a, b), &DMatrix::identity(3, 3)).unwrap();
        let rep = mpv_prune(st, &PruneConfig::new(0.1)).unwrap();
        assert_eq!(rep.outcome, Outcome::Failure);
        assert_eq!(rep.trace.len(), 2);
        assert_eq!(rep.trace[1].dropped_count, 3);
        assert!(rep.trace[1].delta.is_none());
        assert!(rep.final_state.is_none());
        assert!(rep.dictionary.is_none());
    }

    /// Three exactly invariant directions mixed with seven random ones.
    fn planted_invariant(seed: u64) -> (SubspaceState, DMatrix<f64>) {
        let mut r = rng(seed);
        let n = 120;
        let a = gaussian(&mut r, n, 10);
        let mut b = gaussian(&mut r, n, 10);
        let m = gaussian(&mut r, 3, 3);
        b.columns_mut(0, 3).copy_from(&(a.columns(0, 3) * m));
        let mix = gaussian(&mut r, 10, 10);
        let st = SubspaceState::from_basis(synthetic_source(a, b), &mix).unwrap();
        let mut planted = DMatrix::zeros(10, 3);
        planted.view_mut((0, 0), (3, 3)).fill_with_identity();
        (st, planted)
    }

    #[test]
    fn mpv_keeps_a_planted_invariant_subspace() {
        for seed in 0..5 {
            let (st, planted) = planted_invariant(10 + seed);
            let rep = mpv_prune(st.clone(), &PruneConfig::new(1e-3)).unwrap();
            check_trace(&rep);
            let fin = rep.final_state.as_ref().expect("planted subspace is invariant");
            assert!(fin.delta() <= 1e-3);
            for j in 0..3 {
                assert!(eigenfunction_distance(&planted.column(j).into_owned(), fin).unwrap() < 1e-8);
            }
            // Every dropped batch meets the planted subspace only at zero.
            let planted_eval = &st.source().psi_x * &planted;
            let mut current = st;
            for e in &rep.trace[1..] {
                let keep = current.dim() - e.dropped_count;
                let dropped = current.args.u_eval().columns(keep, e.dropped_count).into_owned();
                let cos_max = planted_eval.clone().qr().q().tr_mul(&dropped).singular_values().max();
                assert!(cos_max < 1.0 - 1e-6);
                current = current.recompute_naive(keep).unwrap();
            }
        }
    }

    #[test]
    fn hybrid_with_unit_coarse_tolerance_is_spv() {
        let st = random_state(5, 150, 8, 0.3);
        let cfg = PruneConfig::new(1e-2).with_eps_coarse(1.0);
        let h = hybrid_prune(st.clone(), &cfg).unwrap();
        let s = spv_prune(st, &PruneConfig::new(1e-2)).unwrap();
        assert_eq!(h.trace.len(), s.trace.len());
        assert_eq!(h.final_dim(), s.final_dim());
        if let (Some(a), Some(b)) = (&h.final_state, &s.final_state) {
            assert!(max_subspace_angle(&a.args.u_eval(), &b.args.u_eval()) < 1e-10);
        }
    }

    #[test]
    fn hybrid_trace_is_mpv_then_spv() {
        let (st, _) = eigen_plus_junk();
        let rep = hybrid_prune(st, &PruneConfig::new(1e-6).with_eps_coarse(0.5)).unwrap();
        let stages: Vec<Stage> = rep.trace.iter().map(|e| e.stage).collect();
        assert_eq!(stages[0], Stage::Initial);
        let first_spv = stages.iter().position(|&s| s == Stage::Spv).unwrap_or(stages.len());
        assert!(stages[1..first_spv].iter().all(|&s| s == Stage::Mpv));
        assert!(stages[first_spv..].iter().all(|&s| s == Stage::Spv));
    }

    fn scratch(state: &SubspaceState, keep: usize) -> SubspaceState {
        state.recompute_naive(keep).unwrap()
    }

    #[test]
    fn fast_recompute_matches_scratch() {
        for (seed, k) in [(20u64, 3usize), (21, 1), (22, 7)] {
            let st = random_state(seed, 200, 8, 0.5);
            let fast = fast_recompute(&st.args, k).unwrap();
            let naive = scratch(&st, 8 - k);
            assert!((&fast.theta - &naive.args.theta).amax() < 1e-8, "seed {seed} k {k}");
            let u_fast = st.source().psi_x.clone() * &fast.u_coeff;
            assert!(max_subspace_angle(&u_fast, &naive.args.u_eval()) < 1e-8);
            assert!((&fast.u_eval() - &u_fast).amax() < 1e-9);
            let image = &st.source().psi_xp * &fast.u_coeff;
            assert!((image - fast.image_w_eval() * &fast.image_qr.r).amax() < 1e-9);
        }
    }

    #[test]
    fn fast_recompute_decoupled_spectrum() {
        // Three invariant directions and two mapped orthogonally.
        let mut r = rng(23);
        let q = thin_qr(&gaussian(&mut r, 60, 7)).unwrap().q;
        let a = q.columns(0, 5).into_owned();
        let mut b = a.clone();
        b.columns_mut(3, 2).copy_from(&q.columns(5, 2));
        let st = SubspaceState::from_basis(synthetic_source(a, b), &DMatrix::identity(5, 5)).unwrap();
        let fast = fast_recompute(&st.args, 2).unwrap();
        assert!(fast.sines.amax() < 1e-10);
        let kept = st.args.u_eval().columns(0, 3).into_owned();
        assert!(max_subspace_angle(&fast.u_eval(), &kept) < 1e-10);
    }

    #[test]
    fn fast_recompute_rejects_bad_drop_counts() {
        let st = random_state(24, 50, 4, 0.5);
        assert!(fast_recompute(&st.args, 0).is_err());
        assert!(fast_recompute(&st.args, 4).is_err());
    }

    #[test]
    fn oracle_checks_agree_with_fast_path() {
        for seed in 0..10 {
            let st = random_state(30 + seed, 150, 12, 0.4);
            let mut cfg = PruneConfig::new(1e-3);
            cfg.oracle_check_period = 1;
            cfg.record = RecordPolicy::All;
            let rep = spv_prune(st, &cfg).unwrap();
            for e in &rep.trace[1..] {
                if e.dim > 0 {
                    assert!(e.oracle_discrepancy.unwrap() < 1e-8, "seed {seed}: {:?}", e.oracle_discrepancy);
                }
            }
        }
    }

    #[test]
    fn eigenfunction_distance_edges() {
        let st = random_state(40, 80, 5, 0.5);
        let inside = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0, 3.0]);
        assert!(eigenfunction_distance(&inside, &st).unwrap() < 1e-10);
        assert!(matches!(eigenfunction_distance(&DVector::zeros(5), &st), Err(Error::ZeroFunction)));
        assert!(eigenfunction_distance(&DVector::zeros(4), &st).is_err());
        let mut r = rng(41);
        let q = thin_qr(&gaussian(&mut r, 80, 3)).unwrap().q;
        let f = q.column(2) * 5.0;
        assert!((distance_to_span(&f, &q.columns(0, 2).into_owned()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(PruneConfig::new(1.0).validate().is_err());
        assert!(PruneConfig::new(-0.1).validate().is_err());
        assert!(PruneConfig::new(0.1).with_eps_coarse(0.05).validate().is_err());
        assert!(PruneConfig::new(0.1).with_eps_coarse(0.2).validate().is_ok());
        let st = random_state(42, 50, 3, 0.5);
        assert!(matches!(hybrid_prune(st, &PruneConfig::new(0.2)), Err(Error::InvalidConfig(_))));
        assert_eq!("hybrid".parse::<Algorithm>().unwrap(), Algorithm::Hybrid);
        assert!("mpv-spv-x".parse::<Algorithm>().is_err());
    }

    #[test]
    fn report_json_round_trip() {
        let (st, _) = eigen_plus_junk();
        let mut cfg = PruneConfig::new(1e-3);
        cfg.record = RecordPolicy::All;
        let rep = hybrid_prune(st, &cfg).unwrap();
        let text = rep.to_json();
        let back = PruneReport::from_json(&text).unwrap();
        assert_eq!(back.trace, rep.trace);
        assert_eq!(back.config, rep.config);
        assert_eq!(back.outcome, rep.outcome);
        assert!(back.basis_for_dim(rep.final_dim()).is_some());
        assert_eq!(text, back.to_json());
        assert!(PruneReport::from_json(&text.replace("\"schema_version\": 1", "\"schema_version\": 9")).is_err());
    }

    #[test]
    fn record_policy_controls_bases() {
        let st = random_state(43, 120, 10, 0.5);
        let mut cfg = PruneConfig::new(1e-3);
        cfg.record = RecordPolicy::FinalOnly;
        let rep = spv_prune(st, &cfg).unwrap();
        let n = rep.trace.iter().filter(|e| e.basis_coeff.is_some()).count();
        assert_eq!(n, usize::from(rep.is_success()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn fast_and_naive_spv_agree(seed in 0u64..10_000, s in 2usize..10) {
            let st = random_state(seed, 40 + 10 * s, s, 0.5);
            let mut cfg = PruneConfig::new(1e-2);
            cfg.record = RecordPolicy::All;
            let fast = spv_prune(st.clone(), &cfg).unwrap();
            let naive = spv_prune(st, &cfg.clone().naive()).unwrap();
            prop_assert_eq!(fast.trace.len(), naive.trace.len());
            for (f, n) in fast.trace.iter().zip(&naive.trace) {
                if let (Some(df), Some(dn)) = (f.delta, n.delta) {
                    prop_assert!((df - dn).abs() < 1e-8);
                }
            }
        }
    }
}
