//! Command-line front end: configuration, orchestration and artifacts.
//!
//! Every run is driven by an [`ExperimentConfig`]; command-line flags
//! override fields of a `--config` file. The SHA-256 of the effective
//! configuration is embedded in every artifact.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::laplace::{
    derive_poisson, iterate_phi, plateau, Calibration, FixpointOptions, GridSpec, LaplacePool, LowerTail,
};
use crate::mellin::{analyze, choose_delta, McConfig, MomentMethod, Regime, RootOptions};
use crate::model::{path_to_pointer, ModelSpec};
use crate::parallel::{resolve_workers, Exec};
use crate::tail::{tail_report, TailOptions, Window};
use crate::tilted::{estimate_sigma2, w_function, TiltedLaw, WOptions, WalkOptions, NORMALIZATION_TOL};
use crate::tree::{PrunePolicy, TreeSimulator};
use crate::verify::{default_model, Budget, RunRecord, Verifier};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit status for failed checks or pipeline errors.
pub const EXIT_FAILURE: i32 = 1;
/// Exit status for usage and configuration errors.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub tol: f64,
    pub s_max: f64,
    pub mc_samples: u64,
    pub force_mc: bool,
    pub moments: MomentMethod,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            tol: 1e-12,
            s_max: 10.0,
            mc_samples: 100_000,
            force_mc: false,
            moments: MomentMethod::ClosedFormPreferred,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub samples: u64,
    pub policy: PrunePolicy,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            samples: 100_000,
            policy: PrunePolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixpointConfig {
    /// Exponent; taken from the Mellin analysis when absent.
    pub alpha: Option<f64>,
    pub pool_size: u64,
    pub grid: GridSpec,
    pub tol: f64,
    pub max_iter: usize,
    pub calibration: Calibration,
    pub lower_tail: LowerTail,
}

impl Default for FixpointConfig {
    fn default() -> Self {
        FixpointConfig {
            alpha: None,
            pool_size: 100_000,
            grid: GridSpec::default(),
            tol: 1e-9,
            max_iter: 10_000,
            calibration: Calibration::Critical,
            lower_tail: LowerTail::Alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    pub alpha: Option<f64>,
    pub paths: u64,
    /// Moment exponent; `min(0.5 (1 - alpha), 0.25)` when absent.
    pub delta: Option<f64>,
    pub cap: u64,
    pub w_paths: u64,
    pub x_grid: Vec<f64>,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            alpha: None,
            paths: 100_000,
            delta: None,
            cap: 1 << 20,
            w_paths: 10_000,
            x_grid: vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailConfig {
    pub samples: Option<PathBuf>,
    pub column: String,
    pub alpha: Option<f64>,
    pub window: Window,
    pub with_log: bool,
    pub k_grid: Vec<usize>,
}

impl Default for TailConfig {
    fn default() -> Self {
        TailConfig {
            samples: None,
            column: "r_value".into(),
            alpha: None,
            window: Window::default(),
            with_log: true,
            k_grid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub budget: Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub seed: u64,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub analyze: AnalyzeConfig,
    pub simulate: SimulateConfig,
    pub fixpoint: FixpointConfig,
    pub walk: WalkConfig,
    pub tail: TailConfig,
    pub verify: VerifyConfig,
}

/// Everything but the model, which is parsed separately for precise error
/// pointers.
#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigRest {
    model: Option<Value>,
    seed: u64,
    workers: Option<usize>,
    output_dir: PathBuf,
    analyze: AnalyzeConfig,
    simulate: SimulateConfig,
    fixpoint: FixpointConfig,
    walk: WalkConfig,
    tail: TailConfig,
    verify: VerifyConfig,
}

impl Default for ConfigRest {
    fn default() -> Self {
        ConfigRest {
            model: None,
            seed: 0,
            workers: None,
            output_dir: PathBuf::from("out"),
            analyze: AnalyzeConfig::default(),
            simulate: SimulateConfig::default(),
            fixpoint: FixpointConfig::default(),
            walk: WalkConfig::default(),
            tail: TailConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

fn config_error(pointer: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        pointer: pointer.into(),
        reason: reason.into(),
    }
}

fn prefixed(e: Error, prefix: &str) -> Error {
    match e {
        Error::InvalidModel { pointer, reason } => {
            let p = if pointer == "/" { String::new() } else { pointer };
            Error::InvalidModel {
                pointer: format!("{prefix}{p}"),
                reason,
            }
        }
        other => other,
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error("/", format!("{}: {e}", path.display())))
}

impl ExperimentConfig {
    /// Parses a configuration document; `model` overrides the embedded model.
    pub fn from_value(value: Value, model: Option<ModelSpec>) -> Result<Self> {
        let rest: ConfigRest = serde_path_to_error::deserialize(value)
            .map_err(|e| config_error(path_to_pointer(&e.path().to_string()), e.inner().to_string()))?;
        let model = match (model, rest.model) {
            (Some(m), _) => m,
            (None, Some(v)) => ModelSpec::from_json_value(v).map_err(|e| prefixed(e, "/model"))?,
            (None, None) => return Err(config_error("/model", "missing field `model`")),
        };
        Ok(ExperimentConfig {
            model,
            seed: rest.seed,
            workers: resolve_workers(rest.workers),
            output_dir: rest.output_dir,
            analyze: rest.analyze,
            simulate: rest.simulate,
            fixpoint: rest.fixpoint,
            walk: rest.walk,
            tail: rest.tail,
            verify: rest.verify,
        })
    }

    /// Hash of every field that can change results; `workers` and
    /// `output_dir` are left out.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("workers");
            m.remove("output_dir");
        }
        let text = v.to_string();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn exec(&self) -> Exec {
        Exec::with_workers(self.workers)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "smoothing",
    version,
    about = "Experiments on the smoothing transform X = sum A_i X_i + B"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model specification (JSON); overrides the configured model.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roots of m(s) = 1, regime and moment assumptions.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        mc_samples: Option<u64>,
        #[arg(long)]
        force_mc: bool,
    },
    /// Direct tree simulation of the minimal solution.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        weight_floor: Option<f64>,
        #[arg(long)]
        depth_cap: Option<u32>,
        #[arg(long)]
        node_cap: Option<u64>,
        /// Coarser floors evaluated on the same trees, comma separated.
        #[arg(long, value_delimiter = ',')]
        ladder: Option<Vec<f64>>,
    },
    /// Laplace-transform fixed point and Poisson-equation data.
    Fixpoint {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        pool_size: Option<u64>,
        #[arg(long)]
        ppd: Option<usize>,
        #[arg(long)]
        t_min: Option<f64>,
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Tilted random walk: variance identity and the W function.
    Walk {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        w_paths: Option<u64>,
    },
    /// Tail exponent and constant from a samples CSV.
    Tail {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        column: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Window as `lo,hi`.
        #[arg(long, value_delimiter = ',')]
        window: Option<Vec<f64>>,
        #[arg(long)]
        with_log: Option<bool>,
    },
    /// Runs the cross-module verification suite.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        budget: Option<Budget>,
        /// Run only the named checks, comma separated.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
}

impl clap::ValueEnum for Budget {
    fn value_variants<'a>() -> &'a [Self] {
        &[Budget::Small, Budget::Full]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Budget::Small => "small",
            Budget::Full => "full",
        }))
    }
}

fn load(common: &Common, needs_model: bool) -> Result<ExperimentConfig> {
    let model = common
        .model
        .as_deref()
        .map(|p| ModelSpec::from_json_value(read_json(p)?))
        .transpose()?;
    let base = match &common.config {
        Some(p) => read_json(p)?,
        None => json!({}),
    };
    let model = match (model, needs_model, base.get("model").is_some()) {
        (None, false, false) => Some(default_model()),
        (m, _, _) => m,
    };
    let mut cfg = ExperimentConfig::from_value(base, model)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = resolve_workers(Some(w));
    }
    if let Some(d) = &common.output_dir {
        cfg.output_dir = d.clone();
    }
    Ok(cfg)
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidModel { .. }
                | Error::InvalidConfig { .. }
                | Error::InvalidArgument(_)
                | Error::Json(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Analyze {
            common,
            tol,
            mc_samples,
            force_mc,
        } => {
            let mut cfg = load(&common, true)?;
            if let Some(t) = tol {
                cfg.analyze.tol = t;
            }
            if let Some(n) = mc_samples {
                cfg.analyze.mc_samples = n;
            }
            cfg.analyze.force_mc |= force_mc;
            cmd_analyze(&cfg)
        }
        Command::Simulate {
            common,
            samples,
            weight_floor,
            depth_cap,
            node_cap,
            ladder,
        } => {
            let mut cfg = load(&common, true)?;
            let s = &mut cfg.simulate;
            if let Some(n) = samples {
                s.samples = n;
            }
            if let Some(f) = weight_floor {
                s.policy.weight_floor = f;
            }
            if let Some(d) = depth_cap {
                s.policy.depth_cap = d;
            }
            if let Some(n) = node_cap {
                s.policy.node_cap = n;
            }
            if let Some(l) = ladder {
                s.policy.floor_ladder = l;
            }
            cmd_simulate(&cfg)
        }
        Command::Fixpoint {
            common,
            alpha,
            pool_size,
            ppd,
            t_min,
            t_max,
        } => {
            let mut cfg = load(&common, true)?;
            let f = &mut cfg.fixpoint;
            f.alpha = alpha.or(f.alpha);
            if let Some(p) = pool_size {
                f.pool_size = p;
            }
            if let Some(p) = ppd {
                f.grid.ppd = p;
            }
            if let Some(t) = t_min {
                f.grid.t_min = t;
            }
            if let Some(t) = t_max {
                f.grid.t_max = t;
            }
            cmd_fixpoint(&cfg)
        }
        Command::Walk {
            common,
            alpha,
            paths,
            w_paths,
        } => {
            let mut cfg = load(&common, true)?;
            let w = &mut cfg.walk;
            w.alpha = alpha.or(w.alpha);
            if let Some(p) = paths {
                w.paths = p;
            }
            if let Some(p) = w_paths {
                w.w_paths = p;
            }
            cmd_walk(&cfg)
        }
        Command::Tail {
            common,
            samples,
            column,
            alpha,
            window,
            with_log,
        } => {
            let mut cfg = load(&common, false)?;
            let t = &mut cfg.tail;
            if samples.is_some() {
                t.samples = samples;
            }
            if let Some(c) = column {
                t.column = c;
            }
            t.alpha = alpha.or(t.alpha);
            if let Some(w) = window {
                if w.len() != 2 {
                    return Err(Error::InvalidArgument("--window takes lo,hi".into()));
                }
                t.window = Window::new(w[0], w[1])?;
            }
            if let Some(l) = with_log {
                t.with_log = l;
            }
            cmd_tail(&cfg)
        }
        Command::Verify { common, budget, only } => {
            let mut cfg = load(&common, false)?;
            if let Some(b) = budget {
                cfg.verify.budget = b;
            }
            cmd_verify(&cfg, &only)
        }
    }
}

fn prepare_dir(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(())
}

/// Common header of every JSON artifact.
fn envelope(cfg: &ExperimentConfig, body: Value) -> Value {
    let mut v = json!({
        "config_hash": cfg.hash(),
        "tool_version": TOOL_VERSION,
        "seed": cfg.seed,
        "workers": cfg.workers,
        "model": cfg.model,
    });
    if let (Value::Object(head), Value::Object(rest)) = (&mut v, body) {
        head.extend(rest);
    }
    v
}

fn write_json(cfg: &ExperimentConfig, name: &str, value: &Value) -> Result<PathBuf> {
    prepare_dir(cfg)?;
    let path = cfg.output_dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

/// CSV writer with `#`-prefixed metadata lines before the header.
fn csv_writer(cfg: &ExperimentConfig, name: &str, meta: &[(&str, String)]) -> Result<(csv::Writer<fs::File>, PathBuf)> {
    prepare_dir(cfg)?;
    let path = cfg.output_dir.join(name);
    let mut file = fs::File::create(&path)?;
    writeln!(file, "# config_hash={}", cfg.hash())?;
    writeln!(file, "# tool_version={TOOL_VERSION}")?;
    writeln!(file, "# seed={}", cfg.seed)?;
    writeln!(file, "# workers={}", cfg.workers)?;
    writeln!(file, "# model={}", serde_json::to_string(&cfg.model)?)?;
    for (k, v) in meta {
        writeln!(file, "# {k}={v}")?;
    }
    Ok((csv::Writer::from_writer(file), path))
}

/// Prints a JSON summary; a closed stdout is not an error.
fn emit(value: &Value) {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn root_options(cfg: &ExperimentConfig) -> RootOptions {
    RootOptions {
        tol: cfg.analyze.tol,
        s_max: cfg.analyze.s_max,
        mc: McConfig {
            samples: cfg.analyze.mc_samples,
            seed: cfg.seed,
            force_mc: cfg.analyze.force_mc,
            exec: cfg.exec(),
        },
        ..RootOptions::default()
    }
}

fn resolve_alpha(cfg: &ExperimentConfig, given: Option<f64>) -> Result<(f64, Regime)> {
    let report = crate::mellin::find_roots_with(&cfg.model, &root_options(cfg))?;
    match given.or(report.regime.alpha()) {
        Some(a) => Ok((a, report.regime)),
        None => Err(Error::RegimeMismatch {
            regime: report.regime.name().to_string(),
        }),
    }
}

fn cmd_analyze(cfg: &ExperimentConfig) -> Result<i32> {
    let report = analyze(&cfg.model, &root_options(cfg), cfg.analyze.moments)?;
    let out = envelope(cfg, json!({ "report": report }));
    write_json(cfg, "mellin.json", &out)?;
    emit(&serde_json::to_value(&report)?);
    Ok(0)
}

/// Indices simulated per batch before rows are written.
const SIMULATE_BATCH: u64 = 1 << 16;

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<i32> {
    let s = &cfg.simulate;
    let mut policy = s.policy.clone();
    policy.floor_ladder.sort_by(|a, b| b.total_cmp(a));
    let sim = TreeSimulator::new(&cfg.model, &policy, cfg.seed)?;
    let exec = cfg.exec();
    let (mut w, path) = csv_writer(
        cfg,
        "samples.csv",
        &[
            ("samples", s.samples.to_string()),
            ("policy", serde_json::to_string(&policy)?),
        ],
    )?;
    let mut header: Vec<String> = [
        "index",
        "r_value",
        "pruned_weight",
        "max_weight",
        "nodes_expanded",
        "capped",
        "censored",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(policy.floor_ladder.iter().map(|f| format!("r_floor_{f:e}")));
    w.write_record(&header).map_err(csv_err)?;
    let mut censored = 0u64;
    let mut base = 0u64;
    while base < s.samples {
        let len = SIMULATE_BATCH.min(s.samples - base);
        let batch = exec.map_indexed(len, |i| sim.sample(base + i));
        for (i, t) in batch.iter().enumerate() {
            let c = t.censored(&policy);
            censored += c as u64;
            let mut row = vec![
                (base + i as u64).to_string(),
                t.r_value.to_string(),
                t.pruned_weight.to_string(),
                t.max_weight.to_string(),
                t.nodes_expanded.to_string(),
                t.capped.to_string(),
                c.to_string(),
            ];
            row.extend(t.r_by_floor.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        base += len;
    }
    w.flush()?;
    emit(&json!({ "samples": s.samples, "censored": censored, "output": path }));
    Ok(0)
}

fn cmd_fixpoint(cfg: &ExperimentConfig) -> Result<i32> {
    let f = &cfg.fixpoint;
    let exec = cfg.exec();
    let (alpha, regime) = match resolve_alpha(cfg, f.alpha) {
        Ok((a, r)) => (Some(a), Some(r)),
        Err(Error::RegimeMismatch { .. }) => (None, None),
        Err(e) => return Err(e),
    };
    let critical = matches!(regime, Some(Regime::CriticalTangent { .. }));
    let mut pool = LaplacePool::draw(&cfg.model, f.pool_size, cfg.seed, &exec);
    if let Some(a) = alpha {
        if critical || f.calibration != Calibration::Critical {
            pool.calibrate(a, f.calibration)?;
        }
    }
    let opts = FixpointOptions {
        grid: f.grid,
        tol: f.tol,
        max_iter: f.max_iter,
        lower_tail: f.lower_tail,
        exec,
    };
    let grid = iterate_phi(&pool, alpha, &opts)?;
    let mut summary = json!({
        "alpha": alpha, "iterations": grid.iterations, "residual": grid.residual,
        "invariant_violations": grid.invariant_violations,
    });
    let (mut w, _) = csv_writer(
        cfg,
        "grid.csv",
        &[
            ("iterations", grid.iterations.to_string()),
            ("residual", grid.residual.to_string()),
            ("pool_size", f.pool_size.to_string()),
        ],
    )?;
    w.write_record(["t", "phi", "one_minus_phi"]).map_err(csv_err)?;
    for i in 0..grid.t.len() {
        w.write_record([
            grid.t[i].to_string(),
            grid.phi[i].to_string(),
            grid.one_minus_phi[i].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    if critical {
        let pd = derive_poisson(&grid, &pool, &exec)?;
        let pl = plateau(&pd);
        let (mut w, _) = csv_writer(
            cfg,
            "poisson.csv",
            &[
                ("int_G", pd.int_g.to_string()),
                ("int_xG", pd.int_xg.to_string()),
                ("sigma2", pd.sigma2.to_string()),
                ("C_D", pd.c_d.to_string()),
                ("C_tail", pd.c_tail.to_string()),
                ("plateau", pl.value.to_string()),
                ("plateau_spread", pl.spread.to_string()),
            ],
        )?;
        w.write_record(["x", "D", "G"]).map_err(csv_err)?;
        for i in 0..pd.x.len() {
            w.write_record([pd.x[i].to_string(), pd.d[i].to_string(), pd.g[i].to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        if let Value::Object(m) = &mut summary {
            m.insert("int_G".into(), json!(pd.int_g));
            m.insert("C_D".into(), json!(pd.c_d));
            m.insert("C_tail".into(), json!(pd.c_tail));
            m.insert("plateau".into(), json!(pl));
        }
    }
    emit(&serde_json::to_value(&summary)?);
    Ok(0)
}

fn cmd_walk(cfg: &ExperimentConfig) -> Result<i32> {
    let wc = &cfg.walk;
    let exec = cfg.exec();
    let (alpha, _) = resolve_alpha(cfg, wc.alpha)?;
    let tl = TiltedLaw::new(&cfg.model, alpha, NORMALIZATION_TOL)?;
    let delta = wc.delta.unwrap_or_else(|| choose_delta(alpha));
    let stats = estimate_sigma2(
        &tl,
        &WalkOptions {
            paths: wc.paths,
            seed: cfg.seed,
            delta,
            cap: wc.cap,
            ..WalkOptions::default()
        },
        &exec,
    )?;
    let w = w_function(
        &tl,
        delta,
        &wc.x_grid,
        &WOptions {
            paths: wc.w_paths,
            seed: cfg.seed,
            cap: wc.cap,
            ..WOptions::default()
        },
        &exec,
    );
    let out = envelope(cfg, json!({ "alpha": alpha, "stats": stats, "w": w }));
    write_json(cfg, "walk.json", &out)?;
    let (mut csv, _) = csv_writer(cfg, "w.csv", &[("delta", delta.to_string())])?;
    csv.write_record(["x", "w", "stderr", "approximate"]).map_err(csv_err)?;
    for p in &w {
        csv.write_record([
            p.x.to_string(),
            p.w.to_string(),
            p.stderr.to_string(),
            p.approximate.to_string(),
        ])
        .map_err(csv_err)?;
    }
    csv.flush()?;
    emit(&serde_json::to_value(stats)?);
    Ok(0)
}

/// Reads `column` from a samples CSV, skipping `#` lines and counting rows
/// whose `censored` column is true.
pub fn read_samples(path: &Path, column: &str) -> Result<(Vec<f64>, usize)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::InvalidArgument(format!("column {column} not found in {}", path.display())))?;
    let cens = headers.iter().position(|h| h == "censored");
    let mut values = Vec::new();
    let mut censored = 0usize;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if let Some(c) = cens {
            if matches!(rec.get(c), Some("true") | Some("1")) {
                censored += 1;
                continue;
            }
        }
        let v: f64 = rec
            .get(col)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::InvalidArgument(format!("row {}: bad value in column {column}", line + 1)))?;
        values.push(v);
    }
    Ok((values, censored))
}

fn cmd_tail(cfg: &ExperimentConfig) -> Result<i32> {
    let t = &cfg.tail;
    let path = t
        .samples
        .as_deref()
        .ok_or_else(|| config_error("/tail/samples", "a samples CSV is required"))?;
    let (values, censored) = read_samples(path, &t.column)?;
    let report = tail_report(
        &values,
        censored,
        &TailOptions {
            window: t.window,
            with_log: t.with_log,
            alpha: t.alpha,
            k_grid: t.k_grid.clone(),
        },
    )?;
    let out = envelope(cfg, json!({ "report": report }));
    write_json(cfg, "tail.json", &out)?;
    emit(&serde_json::to_value(&report)?);
    Ok(0)
}

fn cmd_verify(cfg: &ExperimentConfig, only: &[String]) -> Result<i32> {
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let start = Instant::now();
    let verifier = Verifier::new(&cfg.model, cfg.verify.budget, cfg.seed, cfg.exec());
    let known: Vec<&str> = verifier.checks().iter().map(|c| c.0).collect();
    if let Some(bad) = only.iter().find(|n| !known.contains(&n.as_str())) {
        return Err(Error::InvalidArgument(format!(
            "unknown check {bad}; known: {}",
            known.join(", ")
        )));
    }
    let checks = if only.is_empty() {
        verifier.run(|r| eprintln!("{}", r.line()))
    } else {
        only.iter()
            .map(|n| {
                let r = verifier.run_one(n);
                eprintln!("{}", r.line());
                r
            })
            .collect()
    };
    let passed = checks.iter().all(|c| c.passed);
    let record = RunRecord {
        config_hash: cfg.hash(),
        tool_version: TOOL_VERSION.to_string(),
        model_label: cfg.model.label.clone(),
        budget: cfg.verify.budget,
        seed: cfg.seed,
        workers: cfg.workers,
        started_unix,
        wall_seconds: start.elapsed().as_secs_f64(),
        passed,
        checks,
    };
    let value = serde_json::to_value(&record)?;
    write_json(cfg, "verify.json", &value)?;
    emit(&serde_json::to_value(&value)?);
    Ok(if passed { 0 } else { EXIT_FAILURE })
}
