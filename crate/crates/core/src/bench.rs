//! Wall-clock comparison of naive and rank-one-update pruning.

use crate::dictionary::{precondition, Dictionary};
use crate::error::{Error, Result};
use crate::formats::SnapshotSet;
use crate::koopman::{principal_arguments, DictionaryData};
use crate::linalg::{max_subspace_angle, RANK_TOL};
use crate::pruning::{prune, Algorithm, PruneConfig, PruneReport, RecordPolicy, SubspaceState};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

/// Naive and fast final subspaces must agree to this angle before any time is reported.
pub const AGREEMENT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    Spv,
    SpvFast,
    Mpv,
    MpvFast,
    HybridFast,
}

impl BenchMode {
    pub const ALL: [BenchMode; 5] = [Self::Spv, Self::SpvFast, Self::Mpv, Self::MpvFast, Self::HybridFast];

    pub fn algorithm(self) -> Algorithm {
        match self {
            Self::Spv | Self::SpvFast => Algorithm::Spv,
            Self::Mpv | Self::MpvFast => Algorithm::Mpv,
            Self::HybridFast => Algorithm::Hybrid,
        }
    }

    pub fn is_fast(self) -> bool {
        matches!(self, Self::SpvFast | Self::MpvFast | Self::HybridFast)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Spv => "spv",
            Self::SpvFast => "spv_fast",
            Self::Mpv => "mpv",
            Self::MpvFast => "mpv_fast",
            Self::HybridFast => "hybrid_fast",
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown bench mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub eps: f64,
    pub eps_coarse: f64,
    pub repeats: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self { eps: 1e-3, eps_coarse: 0.1, repeats: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub dim: usize,
    pub mode: BenchMode,
    /// Median over repeats of principal arguments from scratch plus the pruning run.
    pub wall_seconds: f64,
    /// Median over repeats of the first principal-argument computation alone.
    pub first_svd_seconds: f64,
    pub final_dim: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn time<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let out = f()?;
    Ok((out, t.elapsed().as_secs_f64()))
}

fn final_subspace_angle(a: &PruneReport, b: &PruneReport) -> f64 {
    match (&a.final_state, &b.final_state) {
        (None, None) => 0.0,
        (Some(x), Some(y)) if x.dim() == y.dim() => max_subspace_angle(&x.args.u_eval(), &y.args.u_eval()),
        _ => f64::INFINITY,
    }
}

/// Times every mode at every preconditioned dimension in `sizes`.
///
/// The preconditioner is capped at each size; a size it cannot reach is a
/// configuration error. Before any row is returned, the final subspace of each
/// fast mode is checked against its naive counterpart (run untimed if that
/// mode was not requested).
pub fn timing_harness(
    dict: &Dictionary,
    data: &SnapshotSet,
    sizes: &[usize],
    modes: &[BenchMode],
    settings: &BenchSettings,
) -> Result<Vec<TimingRow>> {
    if settings.repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be positive".into()));
    }
    let source = Arc::new(DictionaryData::new(dict, &data.x, &data.x_plus)?);
    let mut rows = Vec::new();
    for &size in sizes {
        let pre = precondition(dict, &data.x, RANK_TOL, Some(size))?;
        if pre.retained_dim != size {
            return Err(Error::InvalidConfig(format!(
                "dictionary yields a well-conditioned basis of dimension {} < {size}",
                pre.retained_dim
            )));
        }
        let lifted = source.lift(&pre.basis_coeff)?;
        let mut first = Vec::new();
        for _ in 0..settings.repeats {
            first.push(time(|| principal_arguments(&lifted))?.1);
        }
        let first_svd_seconds = median(first);

        let mut reports = Vec::new();
        for &mode in modes {
            let mut cfg = PruneConfig::new(settings.eps).with_eps_coarse(settings.eps_coarse);
            cfg.record = RecordPolicy::FinalOnly;
            cfg.use_fast_path = mode.is_fast();
            let mut walls = Vec::new();
            let mut last = None;
            for _ in 0..settings.repeats {
                let (rep, secs) = time(|| {
                    let state = SubspaceState::from_basis(Arc::clone(&source), &pre.basis_coeff)?;
                    prune(state, &cfg, mode.algorithm())
                })?;
                walls.push(secs);
                last = Some(rep);
            }
            let rep = last.expect("repeats > 0");
            rows.push(TimingRow {
                dim: size,
                mode,
                wall_seconds: median(walls),
                first_svd_seconds,
                final_dim: rep.final_dim(),
            });
            reports.push((mode, rep));
        }

        for (mode, rep) in reports.iter().filter(|(m, _)| m.is_fast()) {
            let reference = match reports.iter().find(|(m, _)| !m.is_fast() && m.algorithm() == mode.algorithm()) {
                Some((_, r)) => r.clone(),
                None => {
                    let cfg = PruneConfig::new(settings.eps).with_eps_coarse(settings.eps_coarse).naive();
                    let state = SubspaceState::from_basis(Arc::clone(&source), &pre.basis_coeff)?;
                    prune(state, &cfg, mode.algorithm())?
                }
            };
            let angle = final_subspace_angle(rep, &reference);
            if !(angle < AGREEMENT_TOL) {
                return Err(Error::Divergence(format!(
                    "{mode} at dim {size}: final dims {} vs {}, subspace angle {angle:.3e}",
                    rep.final_dim(),
                    reference.final_dim()
                )));
            }
        }
    }
    Ok(rows)
}

/// Table with columns `dim, mode, wall_seconds, first_svd_seconds, final_dim`.
pub fn write_timing_csv<W: Write>(rows: &[TimingRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["dim", "mode", "wall_seconds", "first_svd_seconds", "final_dim"])?;
    for r in rows {
        out.write_record([
            r.dim.to_string(),
            r.mode.to_string(),
            format!("{:.6}", r.wall_seconds),
            format!("{:.6}", r.first_svd_seconds),
            r.final_dim.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Generator;
    use crate::systems::{generate_data, ExperimentConfig, SystemSpec};

    fn instance() -> (Dictionary, SnapshotSet) {
        let dict = Dictionary::from_generators(2, &[Generator::Monomials { max_degree: 4 }]).unwrap();
        let data = generate_data(&ExperimentConfig::new(SystemSpec::van_der_pol(1), 20, 20)).unwrap();
        (dict, data)
    }

    #[test]
    fn modes_parse_and_print() {
        for m in BenchMode::ALL {
            assert_eq!(m.as_str().parse::<BenchMode>().unwrap(), m);
        }
        assert!("fast".parse::<BenchMode>().is_err());
    }

    #[test]
    fn harness_reports_every_mode() {
        let (dict, data) = instance();
        let settings = BenchSettings { repeats: 1, ..Default::default() };
        let rows = timing_harness(&dict, &data, &[10, 15], &BenchMode::ALL, &settings).unwrap();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| r.wall_seconds >= 0.0 && r.first_svd_seconds >= 0.0));
        let mut buf = Vec::new();
        write_timing_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 11);
    }

    #[test]
    fn unreachable_size_is_rejected() {
        let (dict, data) = instance();
        let settings = BenchSettings { repeats: 1, ..Default::default() };
        assert!(matches!(
            timing_harness(&dict, &data, &[16], &[BenchMode::SpvFast], &settings),
            Err(Error::InvalidConfig(_))
        ));
    }
}
