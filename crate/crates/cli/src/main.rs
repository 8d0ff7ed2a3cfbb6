//! Command-line front end: data generation, pruning, prediction, timing and verification.
//!
//! Exit status: 0 on success, 1 when a run ends in a failure result (pruning
//! failure, failed verification suite, numerical breakdown), 2 on usage or
//! input errors.
//!
//! Dictionary JSON (`--dict`): a `state_dim` plus explicit `observables` and/or
//! `generators`, each tagged `{"kind": ..., "params": {...}}`. Generators expand
//! in listed order after the explicit observables.
//!
//! ```json
//! {
//!   "state_dim": 2,
//!   "observables": [
//!     {"kind": "constant"},
//!     {"kind": "coordinate", "params": {"index": 0}},
//!     {"kind": "monomial", "params": {"exponents": [2, 1]}},
//!     {"kind": "gaussian_rbf", "params": {"center": [0.5, 1.0], "width": 0.7}},
//!     {"kind": "wendland", "params": {"center": [0.0, 0.0], "support_radius": 1.0}}
//!   ],
//!   "generators": [
//!     {"kind": "monomials", "params": {"max_degree": 4}},
//!     {"kind": "gaussian_grid", "params": {"lower": [0, 0], "upper": [2, 2], "spacing": 0.5, "width": 0.7}},
//!     {"kind": "wendland_grid", "params": {"lower": [-4, -4], "upper": [4, 4], "spacing": 0.5, "support_radius": 1.5}}
//!   ]
//! }
//! ```
//!
//! Gaussians are `exp(-‖x − c‖² / (2·width²))`; Wendland functions are the C² kernel
//! `(1 − r)₊⁴ (4r + 1)` with `r = ‖x − c‖ / support_radius`. The experiment
//! config read by `--config` is described by `docs/config.schema.json`.

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use koopman_prune::bench::{timing_harness, write_timing_csv, BenchMode, BenchSettings};
use koopman_prune::dictionary::Dictionary;
use koopman_prune::formats::SnapshotSet;
use koopman_prune::model::{build_model_from_basis, predict, tradeoff_scan, write_trace_csv, LiftedModel, TradeoffRow};
use koopman_prune::pruning::{prune, Algorithm, PruneConfig, PruneReport, RecordPolicy, SubspaceState};
use koopman_prune::systems::{
    generate_data, simulate, DictionarySource, ExperimentConfig, SystemKind, SystemSpec,
};
use koopman_prune::linalg::RANK_TOL;
use koopman_prune::{verify, Error};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Environment variable capping internal parallelism.
const THREADS_ENV: &str = "KOOPMAN_PRUNE_THREADS";

#[derive(Parser)]
#[command(name = "koopman-prune", version, about = "Koopman-invariant subspace identification by principal-vector pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and write a snapshot CSV.
    Generate(GenerateArgs),
    /// Prune a dictionary on snapshot data; writes a report JSON and a dimension-vs-proximity CSV.
    Prune(PruneArgs),
    /// Roll a lifted linear model forward and write the prediction trace CSV.
    Predict(PredictArgs),
    /// Time naive and fast pruning and write a timing CSV.
    Bench(BenchArgs),
    /// Run the oracle-equivalence and bound-check suites on a random instance.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Experiment config JSON; overrides the system flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `benchmark2d` or `van_der_pol`.
    #[arg(long, default_value = "benchmark2d")]
    system: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    n_traj: usize,
    #[arg(long, default_value_t = 50)]
    traj_len: usize,
    /// Output CSV; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    data: PathBuf,
    /// Dictionary JSON; may instead come from `--config`.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Experiment config JSON supplying the dictionary and prune settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `spv`, `mpv` or `hybrid`.
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    eps_coarse: Option<f64>,
    /// Recompute every generation from scratch instead of using rank-one updates.
    #[arg(long)]
    naive: bool,
    /// Recompute from scratch every `p` generations and record the discrepancy.
    #[arg(long)]
    oracle_check_period: Option<usize>,
    /// Which trace entries carry bases: `all`, `final` or a proximity limit such as `0.1`.
    #[arg(long)]
    record: Option<String>,
    /// Record per-generation wall-clock seconds (output is then not reproducible).
    #[arg(long)]
    timings: bool,
    /// Cap on the preconditioned dictionary dimension.
    #[arg(long)]
    max_dim: Option<usize>,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Dimension-vs-proximity CSV; defaults to the report path with a `.csv` extension.
    #[arg(long)]
    trace_csv: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Pruning report to build the model from (requires `--data`).
    #[arg(long, conflicts_with = "model")]
    report: Option<PathBuf>,
    /// Saved model JSON.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Snapshot data used to fit the model from a report.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dictionary JSON, when the report does not carry one.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Dimension of the recorded subspace to use; final subspace if absent.
    #[arg(long)]
    pick_dim: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    x0: Vec<f64>,
    #[arg(long)]
    horizon: usize,
    /// System to simulate for the error columns: `benchmark2d` or `van_der_pol`.
    #[arg(long)]
    system: Option<String>,
    /// Also write the fitted model JSON here.
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// With `--report`: also write, for every recorded subspace, its proximity,
    /// state reconstruction residual and (with `--system`) final-step state error.
    #[arg(long, requires = "report")]
    tradeoff_csv: Option<PathBuf>,
    /// Output CSV; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    /// Preconditioned dictionary sizes to time.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// Modes among `spv`, `spv_fast`, `mpv`, `mpv_fast`, `hybrid_fast`; all if absent.
    #[arg(long, value_delimiter = ',')]
    modes: Vec<String>,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    eps_coarse: f64,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Output CSV; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    s: usize,
}

/// Error carrying its exit status.
struct Exit {
    code: u8,
    err: anyhow::Error,
}

impl From<anyhow::Error> for Exit {
    fn from(err: anyhow::Error) -> Self {
        let code = match err.downcast_ref::<Error>() {
            Some(
                Error::InvalidConfig(_)
                | Error::Parse(_)
                | Error::Io(_)
                | Error::DimensionMismatch(_)
                | Error::ZeroFunction,
            )
            | None => 2,
            Some(_) => 1,
        };
        Exit { code, err }
    }
}

impl From<Error> for Exit {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn usage(msg: impl std::fmt::Display) -> Exit {
    Exit { code: 2, err: anyhow!("{msg}") }
}

fn read(path: &Path) -> Result<String, Exit> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<(), Exit> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| usage(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout().write_all(bytes).map_err(|e| usage(e)),
    }
}

fn load_data(path: &Path) -> Result<SnapshotSet, Exit> {
    let file = fs::File::open(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(SnapshotSet::read_csv(file).with_context(|| format!("in {}", path.display()))?)
}

fn load_dict(path: &Path) -> Result<Dictionary, Exit> {
    Ok(Dictionary::from_json(&read(path)?).with_context(|| format!("in {}", path.display()))?)
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Exit> {
    Ok(ExperimentConfig::from_json(&read(path)?).with_context(|| format!("in {}", path.display()))?)
}

fn system_kind(name: &str) -> Result<SystemKind, Exit> {
    match name {
        "benchmark2d" => Ok(SystemSpec::benchmark2d(0).kind),
        "van_der_pol" => Ok(SystemSpec::van_der_pol(0).kind),
        other => Err(usage(format!("unknown system `{other}`"))),
    }
}

fn parse_record(text: &str) -> Result<RecordPolicy, Exit> {
    match text {
        "all" => Ok(RecordPolicy::All),
        "final" => Ok(RecordPolicy::FinalOnly),
        limit => limit
            .parse()
            .map(RecordPolicy::DeltaAtMost)
            .map_err(|_| usage(format!("--record expects `all`, `final` or a number, got `{limit}`"))),
    }
}

fn generate(args: GenerateArgs) -> Result<(), Exit> {
    let cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => {
            let spec = match args.system.as_str() {
                "benchmark2d" => SystemSpec::benchmark2d(args.seed),
                "van_der_pol" => SystemSpec::van_der_pol(args.seed),
                other => return Err(usage(format!("unknown system `{other}`"))),
            };
            ExperimentConfig::new(spec, args.n_traj, args.traj_len)
        }
    };
    let data = generate_data(&cfg)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    write_out(args.out.as_deref(), &buf)
}

/// Dimension-vs-proximity CSV, one row per generation.
fn trace_csv(report: &PruneReport) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut out = String::from("generation,dim,delta,gamma,dropped_count,stage\n");
    for e in &report.trace {
        let stage = serde_json::to_value(e.stage).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.generation,
            e.dim,
            opt(e.delta),
            opt(e.gamma),
            e.dropped_count,
            stage
        ));
    }
    out
}

fn run_prune(args: PruneArgs) -> Result<bool, Exit> {
    let cfg = args.config.as_deref().map(load_config).transpose()?;
    let dict = match (&args.dict, cfg.as_ref().and_then(|c| c.dictionary.as_ref())) {
        (Some(p), _) => load_dict(p)?,
        (None, Some(DictionarySource::Path(p))) => {
            let base = args.config.as_deref().and_then(Path::parent).unwrap_or(Path::new(""));
            load_dict(&base.join(p))?
        }
        (None, Some(DictionarySource::Inline(doc))) => Dictionary::try_from(doc.clone())?,
        (None, None) => return Err(usage("a dictionary is required: pass --dict or a --config with one")),
    };
    let mut prune_cfg = match (cfg.and_then(|c| c.prune), args.eps) {
        (_, Some(eps)) => PruneConfig::new(eps),
        (Some(p), None) => p,
        (None, None) => return Err(usage("a tolerance is required: pass --eps or a --config with prune settings")),
    };
    if let Some(c) = args.eps_coarse {
        prune_cfg.eps_coarse = Some(c);
    }
    if args.naive {
        prune_cfg.use_fast_path = false;
    }
    if let Some(p) = args.oracle_check_period {
        prune_cfg.oracle_check_period = p;
    }
    if let Some(r) = &args.record {
        prune_cfg.record = parse_record(r)?;
    }
    prune_cfg.timings |= args.timings;
    prune_cfg.validate()?;
    let algo: Algorithm = args.algo.as_deref().unwrap_or("hybrid").parse()?;
    let data = load_data(&args.data)?;
    let state = SubspaceState::initial(&dict, &data, RANK_TOL, args.max_dim)?;
    let report = prune(state, &prune_cfg, algo)?;
    write_out(Some(&args.out), report.to_json().as_bytes())?;
    let csv_path = args.trace_csv.unwrap_or_else(|| args.out.with_extension("csv"));
    write_out(Some(&csv_path), trace_csv(&report).as_bytes())?;
    eprintln!(
        "{:?}: {} generations, final dimension {}",
        report.outcome,
        report.trace.len(),
        report.final_dim()
    );
    Ok(report.is_success())
}

fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let n = rows.first().map_or(0, |r| r.recon_error.len());
    let mut out = String::from("dim,delta");
    for i in 0..n {
        out.push_str(&format!(",recon_error{i}"));
    }
    out.push_str(",horizon_state_error\n");
    for r in rows {
        out.push_str(&format!("{},{}", r.dim, r.delta));
        for e in &r.recon_error {
            out.push_str(&format!(",{e}"));
        }
        out.push_str(&format!(",{}\n", r.horizon_state_error.map_or(String::new(), |e| e.to_string())));
    }
    out
}

fn run_predict(args: PredictArgs) -> Result<(), Exit> {
    let model = match (&args.model, &args.report) {
        (Some(p), None) => LiftedModel::from_json(&read(p)?).with_context(|| format!("in {}", p.display()))?,
        (None, Some(p)) => {
            let report = PruneReport::from_json(&read(p)?).with_context(|| format!("in {}", p.display()))?;
            let data_path = args.data.as_deref().ok_or_else(|| usage("--report requires --data"))?;
            let dict = match (&args.dict, &report.dictionary) {
                (Some(d), _) => load_dict(d)?,
                (None, Some(d)) => d.clone(),
                (None, None) => return Err(usage("the report carries no dictionary; pass --dict")),
            };
            let basis = match args.pick_dim {
                Some(k) => report.basis_for_dim(k).ok_or_else(|| {
                    usage(format!("the report records no basis of dimension {k}; rerun prune with --record all"))
                })?,
                None => report
                    .trace
                    .last()
                    .and_then(|e| e.basis_coeff.as_ref())
                    .ok_or_else(|| usage("the report has no final basis; choose one with --pick-dim"))?,
            };
            let data = load_data(data_path)?;
            if let Some(out) = &args.tradeoff_csv {
                let truth = match &args.system {
                    Some(name) => Some(simulate(&system_kind(name)?, &args.x0, args.horizon)?),
                    None => None,
                };
                let rows = tradeoff_scan(&report, &data, &dict, truth.as_ref().map(|t| (args.x0.as_slice(), t)))?;
                write_out(Some(out), tradeoff_csv(&rows).as_bytes())?;
            }
            build_model_from_basis(&dict, basis, &data)?
        }
        _ => return Err(usage("exactly one of --report or --model is required")),
    };
    let truth = match &args.system {
        Some(name) => Some(simulate(&system_kind(name)?, &args.x0, args.horizon)?),
        None => None,
    };
    let trace = predict(&model, &args.x0, args.horizon, truth.as_ref())?;
    if let Some(p) = &args.save_model {
        write_out(Some(p), model.to_json().as_bytes())?;
    }
    let mut buf = Vec::new();
    write_trace_csv(&trace, &mut buf)?;
    write_out(args.out.as_deref(), &buf)
}

fn run_bench(args: BenchArgs) -> Result<(), Exit> {
    let modes = if args.modes.is_empty() {
        BenchMode::ALL.to_vec()
    } else {
        args.modes.iter().map(|m| m.parse()).collect::<Result<Vec<BenchMode>, _>>()?
    };
    let settings = BenchSettings { eps: args.eps, eps_coarse: args.eps_coarse, repeats: args.repeats };
    let rows = timing_harness(&load_dict(&args.dict)?, &load_data(&args.data)?, &args.sizes, &modes, &settings)?;
    let mut buf = Vec::new();
    write_timing_csv(&rows, &mut buf)?;
    write_out(args.out.as_deref(), &buf)
}

fn run_verify(args: VerifyArgs) -> Result<bool, Exit> {
    let results = verify::run_all(args.seed, args.s)?;
    let mut all = true;
    for r in &results {
        all &= r.passed;
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    println!("{}/{} suites passed", results.iter().filter(|r| r.passed).count(), results.len());
    Ok(all)
}

fn check_threads() -> Result<(), Exit> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(()),
            _ => Err(usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(()),
    }
}

fn run(cli: Cli) -> Result<bool, Exit> {
    check_threads()?;
    match cli.command {
        Command::Generate(a) => generate(a).map(|_| true),
        Command::Prune(a) => run_prune(a),
        Command::Predict(a) => run_predict(a).map(|_| true),
        Command::Bench(a) => run_bench(a).map(|_| true),
        Command::Verify(a) => run_verify(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Exit { code, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
