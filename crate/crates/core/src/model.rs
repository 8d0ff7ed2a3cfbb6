//! Lifted linear predictor `z⁺ = A z`, `x̂ = C z` on a (pruned) dictionary basis.

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::formats::{matrix, SnapshotSet};
use crate::linalg::{lstsq, lstsq_full_rank};
use crate::pruning::{PruneReport, SubspaceState};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Rollouts whose lifted norm exceeds this multiple of the training median are flagged divergent.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiftedModel {
    pub schema_version: u32,
    /// s×s, `z⁺ = a_dyn·z`.
    #[serde(with = "matrix")]
    pub a_dyn: DMatrix<f64>,
    /// n×s, `x̂ = c_out·z`.
    #[serde(with = "matrix")]
    pub c_out: DMatrix<f64>,
    /// s₀×s, `z = lift_coeffᵀ·Ψ(x)`.
    #[serde(with = "matrix")]
    pub lift_coeff: DMatrix<f64>,
    pub dict: Dictionary,
    /// Median of `‖z‖` over the training states.
    pub lifted_norm_median: f64,
}

impl LiftedModel {
    pub fn dim(&self) -> usize {
        self.a_dyn.nrows()
    }

    pub fn lift(&self, x: &[f64]) -> Result<DVector<f64>> {
        let psi = DVector::from_vec(self.dict.evaluate_point(x)?);
        Ok(self.lift_coeff.tr_mul(&psi))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported model schema version {}", m.schema_version)));
        }
        let s = m.a_dyn.nrows();
        if m.a_dyn.ncols() != s
            || m.c_out.ncols() != s
            || m.lift_coeff.ncols() != s
            || m.lift_coeff.nrows() != m.dict.len()
            || m.c_out.nrows() != m.dict.state_dim()
        {
            return Err(Error::Parse("model matrices have inconsistent shapes".into()));
        }
        Ok(m)
    }
}

/// Model on the basis of a pruned subspace; refuses a rank-deficient basis.
pub fn build_model(state: &SubspaceState, data: &SnapshotSet) -> Result<LiftedModel> {
    fit(&state.source().dict, state.basis_coeff(), data, true)
}

/// Model on an arbitrary basis (e.g. the identity for full-dictionary EDMD).
///
/// A rank-deficient basis is handled with the truncated pseudoinverse.
pub fn build_model_from_basis(dict: &Dictionary, basis_coeff: &DMatrix<f64>, data: &SnapshotSet) -> Result<LiftedModel> {
    fit(dict, basis_coeff, data, false)
}

fn fit(dict: &Dictionary, basis_coeff: &DMatrix<f64>, data: &SnapshotSet, strict: bool) -> Result<LiftedModel> {
    if basis_coeff.nrows() != dict.len() {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} rows for a dictionary of {} functions",
            basis_coeff.nrows(),
            dict.len()
        )));
    }
    if data.is_empty() {
        return Err(Error::DimensionMismatch("no snapshot pairs".into()));
    }
    let scale = 1.0 / (data.len() as f64).sqrt();
    let z = dict.evaluate(&data.x)? * basis_coeff;
    let zp = dict.evaluate(&data.x_plus)? * basis_coeff;
    let (zs, zps, xs) = (&z * scale, &zp * scale, &data.x * scale);
    let (k_f, c_t) = if strict {
        (lstsq_full_rank(&zs, &zps, "basis")?, lstsq_full_rank(&zs, &xs, "basis")?)
    } else {
        (lstsq(&zs, &zps)?, lstsq(&zs, &xs)?)
    };
    let mut norms: Vec<f64> = z.row_iter().map(|r| r.norm()).collect();
    norms.sort_by(|a, b| a.total_cmp(b));
    let lifted_norm_median = norms[norms.len() / 2];
    Ok(LiftedModel {
        schema_version: MODEL_SCHEMA_VERSION,
        a_dyn: k_f.transpose(),
        c_out: c_t.transpose(),
        lift_coeff: basis_coeff.clone(),
        dict: dict.clone(),
        lifted_norm_median,
    })
}

/// One step of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    pub t: usize,
    pub x_pred: Vec<f64>,
    pub z_pred: Vec<f64>,
    pub e_state: Option<f64>,
    pub e_lifted: Option<f64>,
    /// The lifted state left the training scale; predictions from here on are NaN.
    pub divergent: bool,
}

/// Roll the lifted dynamics forward from `Ψ(x0)` for `horizon` steps (t = 0..=horizon).
///
/// `truth`, if given, holds the true states row by row starting at `x0` and
/// must cover the whole horizon.
pub fn predict(model: &LiftedModel, x0: &[f64], horizon: usize, truth: Option<&DMatrix<f64>>) -> Result<Vec<PredictionTrace>> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let n = model.dict.state_dim();
    if let Some(tr) = truth {
        if tr.nrows() < horizon + 1 || tr.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "truth is {}x{}, need at least {}x{n}",
                tr.nrows(),
                tr.ncols(),
                horizon + 1
            )));
        }
    }
    let limit = DIVERGENCE_FACTOR * model.lifted_norm_median.max(f64::MIN_POSITIVE);
    let mut z = model.lift(x0)?;
    let mut divergent = false;
    let mut out = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        if !divergent && !(z.norm() <= limit) {
            divergent = true;
        }
        if divergent {
            z.fill(f64::NAN);
        }
        let x_pred = &model.c_out * &z;
        let (e_state, e_lifted) = match truth {
            Some(tr) => {
                let xt: Vec<f64> = tr.row(t).iter().cloned().collect();
                let e_s = (DVector::from_vec(xt.clone()) - &x_pred).norm();
                let e_l = (model.lift(&xt)? - &z).norm();
                (Some(e_s), Some(e_l))
            }
            None => (None, None),
        };
        out.push(PredictionTrace {
            t,
            x_pred: x_pred.iter().cloned().collect(),
            z_pred: z.iter().cloned().collect(),
            e_state,
            e_lifted,
            divergent,
        });
        if t < horizon {
            z = &model.a_dyn * &z;
        }
    }
    Ok(out)
}

/// CSV with columns `t, x_pred0.., e_state, e_lifted`; error fields are empty without truth.
pub fn write_trace_csv<W: Write>(trace: &[PredictionTrace], w: W) -> Result<()> {
    let n = trace.first().map_or(0, |r| r.x_pred.len());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x_pred{i}")));
    header.push("e_state".into());
    header.push("e_lifted".into());
    out.write_record(&header)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in trace {
        let mut rec = vec![r.t.to_string()];
        rec.extend(r.x_pred.iter().map(|v| v.to_string()));
        rec.push(opt(r.e_state));
        rec.push(opt(r.e_lifted));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// One nested subspace of a trade-off scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub dim: usize,
    pub delta: f64,
    /// `‖(I − P_S) e_j‖` per state coordinate, empirical norm.
    pub recon_error: Vec<f64>,
    /// `e_state` at the end of the rollout, when one was requested.
    pub horizon_state_error: Option<f64>,
}

/// Builds a model for every trace entry that carries a basis and reports
/// invariance, reconstruction residual and (optionally) rollout error.
///
/// `rollout` is `(x0, truth)` with `truth` starting at `x0`; the horizon is
/// `truth.nrows() − 1`.
pub fn tradeoff_scan(
    report: &PruneReport,
    data: &SnapshotSet,
    dict: &Dictionary,
    rollout: Option<(&[f64], &DMatrix<f64>)>,
) -> Result<Vec<TradeoffRow>> {
    let scale = 1.0 / (data.len().max(1) as f64).sqrt();
    let psi = dict.evaluate(&data.x)?;
    let xs = &data.x * scale;
    let mut rows = Vec::new();
    for entry in &report.trace {
        let (Some(coeff), Some(delta)) = (&entry.basis_coeff, entry.delta) else {
            continue;
        };
        let model = build_model_from_basis(dict, coeff, data)?;
        let zs = &psi * coeff * scale;
        let resid = &xs - &zs * model.c_out.transpose();
        let recon_error = resid.column_iter().map(|c| c.norm()).collect();
        let horizon_state_error = match rollout {
            Some((x0, truth)) if truth.nrows() >= 2 => {
                let tr = predict(&model, x0, truth.nrows() - 1, Some(truth))?;
                tr.last().and_then(|r| r.e_state)
            }
            _ => None,
        };
        rows.push(TradeoffRow { dim: entry.dim, delta, recon_error, horizon_state_error });
    }
    Ok(rows)
}
