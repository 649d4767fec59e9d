//! Command-line front end: `generate`, `fit`, `eval` and `benchmark`.
//!
//! Every command reads an optional JSON config whose top-level keys may be
//! overridden by flags. Exit codes: 0 success, 1 numerical failure, 2 invalid
//! input, 3 I/O failure, 4 fit stopped before convergence (output written).

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::baselines::{fit_mfgm, fit_scalar_notears};
use crate::em::{fit, fit_from, BasisCounts, FitConfig, FitReport};
use crate::error::{Error, Result};
use crate::eval::{aligned_c_error, edge_metrics, mse_diagnostics};
use crate::io::{read_dataset, read_to_string, write_atomic, write_dataset, write_json};
use crate::model::{compute_w, BlockAdjacency, FunctionalDataset, ModelParams, ProblemShape};
use crate::mstep::SolverConfig;
use crate::synth::{generate_dataset, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Iteration { source, .. } => exit_code(source),
        Error::SolverNumerical(_)
        | Error::SingularTransition
        | Error::NotPositiveDefinite
        | Error::DegenerateBasis { .. } => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

#[derive(Debug, Parser)]
#[command(name = "multifun-dag", version, about = "Causal structure learning for multivariate functional data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic dataset with ground truth.
    Generate(GenerateArgs),
    /// Fit a model to a dataset directory.
    Fit(FitArgs),
    /// Score a fitted model against a dataset's ground truth.
    Eval(EvalArgs),
    /// Run a grid of generate/fit/eval jobs.
    Benchmark(BenchArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "w-threshold")]
    w_threshold: Option<f64>,
    /// Start EM from a previously written model instead of FPCA.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Model JSON written by `fit` (or any file in the model schema).
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory with ground truth.
    #[arg(long)]
    data: PathBuf,
    /// Output metrics JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "w-threshold")]
    w_threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Per-job results CSV; the summary goes next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long = "w-threshold")]
    w_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Regularized EM over Kronecker-factored blocks.
    Multifun,
    /// Per-node FPCA, then one constrained regression.
    Mfgm,
    /// Shared FPCA, then scalar NOTEARS on the scores.
    Notears,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Multifun => "multifun",
            Method::Mfgm => "mfgm",
            Method::Notears => "notears",
        }
    }
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(&a).map(|_| EXIT_OK),
        Command::Fit(a) => cmd_fit(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| EXIT_OK),
        Command::Benchmark(a) => cmd_benchmark(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

// ---------------------------------------------------------------------------
// Config plumbing

fn load_object(path: Option<&Path>) -> Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = read_to_string(path)?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::Input(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(Error::Input(format!("{}: {e}", path.display()))),
    }
}

fn set<T: Serialize>(obj: &mut Map<String, Value>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        obj.insert(key.into(), serde_json::to_value(v).expect("plain value"));
    }
}

/// Deserialize with errors that name the offending key.
fn parse_config<T: DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let msg = e.inner().to_string();
        let path = e.path().to_string();
        let key = match msg.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
            Some(field) if path == "." => field.to_string(),
            _ => path.strip_prefix("solver.").unwrap_or(&path).to_string(),
        };
        Error::config(&key, msg)
    })
}

fn solver_keys() -> Vec<String> {
    match serde_json::to_value(SolverConfig::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

/// Split a flat config object into a fit config and a method. Solver keys
/// sit at the top level next to the EM keys.
fn fit_config_from(mut obj: Map<String, Value>) -> Result<(FitConfig, Method)> {
    let method = match obj.remove("method") {
        Some(v) => parse_config::<Method>(v).map_err(|e| match e {
            Error::Config { reason, .. } => Error::config("method", reason),
            other => other,
        })?,
        None => Method::Multifun,
    };
    if obj.contains_key("solver") {
        return Err(Error::config("solver", "solver keys belong at the top level"));
    }
    let mut solver = Map::new();
    for k in solver_keys() {
        if let Some(v) = obj.remove(&k) {
            solver.insert(k, v);
        }
    }
    obj.insert("solver".into(), Value::Object(solver));
    let cfg: FitConfig = parse_config(Value::Object(obj))?;
    cfg.validate()?;
    Ok((cfg, method))
}

/// Parse a flat JSON fit config (the `fit --config` format).
pub fn parse_fit_config(json: &str) -> Result<(FitConfig, Method)> {
    match serde_json::from_str(json) {
        Ok(Value::Object(m)) => fit_config_from(m),
        Ok(_) => Err(Error::Input("config must be a JSON object".into())),
        Err(e) => Err(Error::Input(format!("config: {e}"))),
    }
}

/// Run one fitting method.
pub fn run_method(data: &FunctionalDataset, cfg: &FitConfig, method: Method) -> Result<FitReport> {
    match method {
        Method::Multifun => fit(data, cfg),
        Method::Mfgm => fit_mfgm(data, cfg),
        Method::Notears => fit_scalar_notears(data, cfg),
    }
}

// ---------------------------------------------------------------------------
// generate

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateFile {
    #[serde(rename = "P")]
    p: usize,
    #[serde(rename = "L")]
    l: BasisCounts,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "N")]
    n: usize,
    edge_prob: Option<f64>,
    coef_low: Option<f64>,
    coef_high: Option<f64>,
    omega2_true: Option<f64>,
    r2_true: Option<f64>,
    #[serde(default)]
    seed: u64,
}

impl GenerateFile {
    fn into_synth(self) -> Result<SynthConfig> {
        let d = SynthConfig::default();
        let l = self.l.resolve(self.p).map_err(|_| Error::config("L", format!("needs one entry per node (P = {})", self.p)))?;
        let shape = ProblemShape::new(l, vec![self.k; self.p], self.t, self.n)?;
        let cfg = SynthConfig {
            shape,
            edge_prob: self.edge_prob.unwrap_or(d.edge_prob),
            coef_low: self.coef_low.unwrap_or(d.coef_low),
            coef_high: self.coef_high.unwrap_or(d.coef_high),
            omega2_true: self.omega2_true.unwrap_or(d.omega2_true),
            r2_true: self.r2_true.unwrap_or(d.r2_true),
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut obj = load_object(Some(&a.config))?;
    set(&mut obj, "seed", a.seed);
    let cfg = parse_config::<GenerateFile>(Value::Object(obj))?.into_synth()?;
    let (data, truth) = generate_dataset(&cfg)?;
    write_dataset(&a.out, &data, Some(&truth))
}

// ---------------------------------------------------------------------------
// fit

/// The model schema plus a `report` object.
fn model_document(report: &FitReport, method: Method) -> Result<Value> {
    let mut doc = serde_json::to_value(&report.params)?;
    let mut rep = serde_json::to_value(report)?;
    if let Value::Object(r) = &mut rep {
        r.remove("params");
        r.insert("method".into(), Value::String(method.as_str().into()));
    }
    if let Value::Object(d) = &mut doc {
        d.insert("report".into(), rep);
    }
    Ok(doc)
}

fn read_model(path: &Path) -> Result<(ModelParams, Option<Value>)> {
    let text = read_to_string(path)?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let report = doc.as_object_mut().and_then(|d| d.remove("report"));
    let params: ModelParams =
        serde_json::from_value(doc).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok((params, report))
}

fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let mut obj = load_object(a.config.as_deref())?;
    set(&mut obj, "method", a.method);
    set(&mut obj, "lambda", a.lambda);
    set(&mut obj, "seed", a.seed);
    set(&mut obj, "w_threshold", a.w_threshold);
    let (mut cfg, method) = fit_config_from(obj)?;
    let ds = read_dataset(&a.data)?;

    let report = match &a.init {
        None => run_method(&ds.data, &cfg, method)?,
        Some(path) => {
            if method != Method::Multifun {
                return Err(Error::config("method", "--init only applies to the multifun method"));
            }
            let (init, rep) = read_model(path)?;
            let duals = rep
                .and_then(|r| r.get("duals").cloned())
                .and_then(|d| serde_json::from_value::<Option<[f64; 2]>>(d).ok())
                .flatten();
            if let Some([da, db]) = duals {
                cfg.solver.a_init = da;
                cfg.solver.b_init = db;
            }
            if cfg.k.is_none() {
                cfg.k = Some(BasisCounts::PerNode(init.shape.k.clone()));
            }
            cfg.validate()?;
            fit_from(&ds.data, &cfg, init)?
        }
    };
    write_json(&a.out, &model_document(&report, method)?)?;
    Ok(if report.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

// ---------------------------------------------------------------------------
// eval

/// Metrics written by `eval` and recorded per benchmark job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub shd: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub c_error: f64,
    pub mse_est: f64,
    pub mse_true: Option<f64>,
    pub delta: Option<f64>,
    pub w_threshold: f64,
}

/// Score `params` (with adjacency `w`) against a dataset and its truth.
pub fn evaluate(
    data: &FunctionalDataset,
    truth: &crate::synth::GroundTruth,
    params: &ModelParams,
    w: &BlockAdjacency,
    w_threshold: f64,
) -> Result<EvalMetrics> {
    if params.shape.p != truth.params_true.shape.p || w.w.nrows() != params.shape.p {
        return Err(Error::Dimension("model and ground truth have different node counts".into()));
    }
    let m = edge_metrics(&w.support(w_threshold), &truth.adjacency_true)?;
    let c_error = aligned_c_error(params, &truth.params_true)?;
    let mut model = params.clone();
    model.shape.n = data.shape.n;
    let mse = mse_diagnostics(data, &model, Some(truth))?;
    Ok(EvalMetrics {
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        shd: m.shd,
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
        c_error,
        mse_est: mse.mse_est,
        mse_true: mse.mse_true,
        delta: mse.delta,
        w_threshold,
    })
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (params, report) = read_model(&a.model)?;
    let ds = read_dataset(&a.data)?;
    let truth = ds
        .truth
        .as_ref()
        .ok_or_else(|| Error::Input(format!("{} has no ground truth", a.data.display())))?;
    if !params.shape.same_layout(&ds.data.shape.with_k(&params.shape.k)) {
        return Err(Error::Dimension("model shape does not match the dataset".into()));
    }
    // Baselines store their own adjacency; otherwise recompute it.
    let w = match report.and_then(|r| r.get("W").cloned()) {
        Some(v) => serde_json::from_value(v).map_err(|e| Error::Input(format!("report.W: {e}")))?,
        None => compute_w(&params),
    };
    let threshold = a.w_threshold.unwrap_or(SolverConfig::default().w_threshold);
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Error::config("w_threshold", "must be a nonnegative number"));
    }
    let metrics = evaluate(&ds.data, truth, &params, &w, threshold)?;
    write_json(&a.out, &metrics)
}

// ---------------------------------------------------------------------------
// benchmark

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchGrid {
    #[serde(rename = "N")]
    n: OneOrMany<usize>,
    #[serde(rename = "P")]
    p: OneOrMany<usize>,
    #[serde(rename = "L0")]
    l0: OneOrMany<usize>,
    #[serde(rename = "K0")]
    k0: OneOrMany<usize>,
    lambda: OneOrMany<f64>,
    method: OneOrMany<Method>,
    seeds: Seeds,
    #[serde(rename = "T", default = "default_t")]
    t: usize,
    edge_prob: Option<f64>,
    coef_low: Option<f64>,
    coef_high: Option<f64>,
    omega2_true: Option<f64>,
    r2_true: Option<f64>,
    threads: Option<usize>,
}

fn default_t() -> usize {
    50
}

const GRID_KEYS: &[&str] = &[
    "N",
    "P",
    "L0",
    "K0",
    "lambda",
    "method",
    "seeds",
    "T",
    "edge_prob",
    "coef_low",
    "coef_high",
    "omega2_true",
    "r2_true",
    "threads",
];

/// One benchmark job: a grid cell, a method and a seed.
#[derive(Debug, Clone, PartialEq)]
struct Job {
    n: usize,
    p: usize,
    l0: usize,
    k0: usize,
    lambda: f64,
    method: Method,
    seed: u64,
}

type JobKey = (usize, usize, usize, usize, u64, Method, u64);

impl Job {
    fn key(&self) -> JobKey {
        (self.n, self.p, self.l0, self.k0, self.lambda.to_bits(), self.method, self.seed)
    }
}

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "P")]
    pub p: usize,
    #[serde(rename = "L0")]
    pub l0: usize,
    #[serde(rename = "K0")]
    pub k0: usize,
    pub lambda: f64,
    pub method: Method,
    pub seed: u64,
    pub status: String,
    pub message: String,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub shd: Option<usize>,
    pub tp: Option<usize>,
    pub fp: Option<usize>,
    #[serde(rename = "fn")]
    pub fn_: Option<usize>,
    pub c_error: Option<f64>,
    pub mse_est: Option<f64>,
    pub mse_true: Option<f64>,
    pub delta: Option<f64>,
}

impl BenchRow {
    fn key(&self) -> JobKey {
        (self.n, self.p, self.l0, self.k0, self.lambda.to_bits(), self.method, self.seed)
    }

    fn empty(job: &Job, status: &str, message: String) -> Self {
        Self {
            n: job.n,
            p: job.p,
            l0: job.l0,
            k0: job.k0,
            lambda: job.lambda,
            method: job.method,
            seed: job.seed,
            status: status.into(),
            message,
            iterations: None,
            converged: None,
            precision: None,
            recall: None,
            f1: None,
            shd: None,
            tp: None,
            fp: None,
            fn_: None,
            c_error: None,
            mse_est: None,
            mse_true: None,
            delta: None,
        }
    }
}

fn run_job(job: &Job, grid: &BenchGrid, fit_cfg: &FitConfig) -> BenchRow {
    let attempt = || -> Result<BenchRow> {
        let d = SynthConfig::default();
        let synth = SynthConfig {
            shape: ProblemShape::uniform(job.p, job.l0, job.k0, grid.t, job.n)?,
            edge_prob: grid.edge_prob.unwrap_or(d.edge_prob),
            coef_low: grid.coef_low.unwrap_or(d.coef_low),
            coef_high: grid.coef_high.unwrap_or(d.coef_high),
            omega2_true: grid.omega2_true.unwrap_or(d.omega2_true),
            r2_true: grid.r2_true.unwrap_or(d.r2_true),
            seed: job.seed,
        };
        let (data, truth) = generate_dataset(&synth)?;
        let mut cfg = fit_cfg.clone();
        cfg.seed = job.seed;
        cfg.solver.lambda = job.lambda;
        cfg.k = Some(BasisCounts::Uniform(job.k0));
        let rep = run_method(&data, &cfg, job.method)?;
        let m = evaluate(&data, &truth, &rep.params, &rep.w, cfg.solver.w_threshold)?;
        let mut row = BenchRow::empty(job, "ok", String::new());
        row.iterations = Some(rep.iterations);
        row.converged = Some(rep.converged);
        row.precision = Some(m.precision);
        row.recall = Some(m.recall);
        row.f1 = Some(m.f1);
        row.shd = Some(m.shd);
        row.tp = Some(m.tp);
        row.fp = Some(m.fp);
        row.fn_ = Some(m.fn_);
        row.c_error = Some(m.c_error);
        row.mse_est = Some(m.mse_est);
        row.mse_true = m.mse_true;
        row.delta = m.delta;
        Ok(row)
    };
    attempt().unwrap_or_else(|e| BenchRow::empty(job, "error", e.to_string()))
}

fn read_rows(path: &Path) -> Result<Vec<BenchRow>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = read_to_string(path)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                line: i + 2,
                reason: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

fn rows_csv(rows: &[BenchRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Input(format!("csv encoding failed: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Input(format!("csv encoding failed: {e}")))
}

/// `results.csv` → `results_summary.csv`.
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    out.with_file_name(format!("{stem}_summary{ext}"))
}

/// Sample mean and 95% normal-approximation half-width `1.96 s / √n`.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

type CellKey = (usize, usize, usize, usize, u64, Method);
type Metric = (&'static str, fn(&BenchRow) -> Option<f64>);

fn summary_csv(rows: &[BenchRow]) -> Result<Vec<u8>> {
    let metrics: [Metric; 8] = [
        ("f1", |r| r.f1),
        ("precision", |r| r.precision),
        ("recall", |r| r.recall),
        ("shd", |r| r.shd.map(|v| v as f64)),
        ("c_error", |r| r.c_error),
        ("mse_est", |r| r.mse_est),
        ("mse_true", |r| r.mse_true),
        ("delta", |r| r.delta),
    ];
    let mut cells: BTreeMap<CellKey, Vec<&BenchRow>> = BTreeMap::new();
    let mut order: Vec<CellKey> = Vec::new();
    for r in rows {
        let key = (r.n, r.p, r.l0, r.k0, r.lambda.to_bits(), r.method);
        if !cells.contains_key(&key) {
            order.push(key);
        }
        cells.entry(key).or_default().push(r);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let sink = |e: csv::Error| Error::Input(format!("csv encoding failed: {e}"));
    let mut header: Vec<String> = ["N", "P", "L0", "K0", "lambda", "method", "n_ok", "n_failed"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for (name, _) in &metrics {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_ci95"));
    }
    w.write_record(&header).map_err(sink)?;
    for key in order {
        let group = &cells[&key];
        let first = group[0];
        let ok: Vec<&BenchRow> = group.iter().copied().filter(|r| r.status == "ok").collect();
        let mut rec = vec![
            first.n.to_string(),
            first.p.to_string(),
            first.l0.to_string(),
            first.k0.to_string(),
            first.lambda.to_string(),
            first.method.as_str().to_string(),
            ok.len().to_string(),
            (group.len() - ok.len()).to_string(),
        ];
        for (_, get) in &metrics {
            let vals: Vec<f64> = ok.iter().filter_map(|r| get(r)).collect();
            if vals.is_empty() {
                rec.push(String::new());
                rec.push(String::new());
            } else {
                let (m, ci) = mean_ci(&vals);
                rec.push(m.to_string());
                rec.push(ci.to_string());
            }
        }
        w.write_record(&rec).map_err(sink)?;
    }
    w.into_inner().map_err(|e| Error::Input(format!("csv encoding failed: {e}")))
}

/// Jobs in file order: every grid axis in turn, seeds innermost.
fn expand_jobs(grid: &BenchGrid) -> Vec<Job> {
    let seeds = match &grid.seeds {
        Seeds::Count(k) => (0..*k).collect(),
        Seeds::List(v) => v.clone(),
    };
    let mut jobs = Vec::new();
    for n in grid.n.values() {
        for p in grid.p.values() {
            for l0 in grid.l0.values() {
                for k0 in grid.k0.values() {
                    for lambda in grid.lambda.values() {
                        for method in grid.method.values() {
                            for &seed in &seeds {
                                jobs.push(Job {
                                    n,
                                    p,
                                    l0,
                                    k0,
                                    lambda,
                                    method,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    jobs
}

fn ordered_rows(jobs: &[Job], done: &BTreeMap<JobKey, BenchRow>, extra: &[BenchRow]) -> Vec<BenchRow> {
    let mut rows: Vec<BenchRow> = jobs.iter().filter_map(|j| done.get(&j.key()).cloned()).collect();
    rows.extend(extra.iter().cloned());
    rows
}

fn cmd_benchmark(a: &BenchArgs) -> Result<i32> {
    let mut obj = load_object(Some(&a.config))?;
    set(&mut obj, "threads", a.threads);
    set(&mut obj, "lambda", a.lambda);
    set(&mut obj, "method", a.method);
    set(&mut obj, "w_threshold", a.w_threshold);
    if a.seed.is_some() {
        set(&mut obj, "seeds", a.seed.map(|s| vec![s]));
    }
    let mut grid_obj = Map::new();
    for k in GRID_KEYS {
        if let Some(v) = obj.remove(*k) {
            grid_obj.insert((*k).into(), v);
        }
    }
    if obj.contains_key("seed") || obj.contains_key("K") {
        return Err(Error::config(
            if obj.contains_key("seed") { "seed" } else { "K" },
            "set per job by the grid; use `seeds` or `K0`",
        ));
    }
    let grid: BenchGrid = parse_config(Value::Object(grid_obj))?;
    let (fit_cfg, _) = fit_config_from(obj)?;
    if grid.threads == Some(0) {
        return Err(Error::config("threads", "must be at least 1"));
    }
    let jobs = expand_jobs(&grid);
    if jobs.is_empty() {
        return Err(Error::config("seeds", "the grid has no jobs"));
    }

    let existing = read_rows(&a.out)?;
    let wanted: HashSet<JobKey> = jobs.iter().map(Job::key).collect();
    let mut done = BTreeMap::new();
    let mut extra = Vec::new();
    for r in existing {
        if wanted.contains(&r.key()) {
            done.insert(r.key(), r);
        } else {
            extra.push(r);
        }
    }
    let pending: Vec<&Job> = jobs.iter().filter(|j| !done.contains_key(&j.key())).collect();

    let threads = grid
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Input(format!("thread pool: {e}")))?;

    let state = Mutex::new((done, None::<Error>));
    pool.install(|| {
        pending.par_iter().for_each(|job| {
            let row = run_job(job, &grid, &fit_cfg);
            let mut guard = state.lock().expect("results lock");
            guard.0.insert(job.key(), row);
            let rows = ordered_rows(&jobs, &guard.0, &extra);
            if let Err(e) = rows_csv(&rows).and_then(|b| write_atomic(&a.out, &b)) {
                guard.1.get_or_insert(e);
            }
        })
    });
    let (done, write_err) = state.into_inner().expect("results lock");
    if let Some(e) = write_err {
        return Err(e);
    }
    let rows = ordered_rows(&jobs, &done, &extra);
    write_atomic(&a.out, &rows_csv(&rows)?)?;
    write_atomic(&summary_path(&a.out), &summary_csv(&rows)?)?;
    let any_ok = jobs.iter().any(|j| done.get(&j.key()).is_some_and(|r| r.status == "ok"));
    if any_ok {
        Ok(EXIT_OK)
    } else {
        eprintln!("error: every benchmark job failed");
        Ok(EXIT_INPUT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_ci_matches_hand_values() {
        let (m, ci) = mean_ci(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // s² = 5/3, so 1.96·sqrt(5/12).
        assert!((ci - 1.96 * (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_ci(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn summary_path_keeps_extension() {
        assert_eq!(summary_path(Path::new("out/res.csv")), PathBuf::from("out/res_summary.csv"));
        assert_eq!(summary_path(Path::new("res")), PathBuf::from("res_summary"));
    }

    #[test]
    fn config_errors_name_the_key() {
        let obj: Map<String, Value> = serde_json::from_str(r#"{"lambda": 0.1, "bogus": 1}"#).unwrap();
        match fit_config_from(obj) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "bogus"),
            other => panic!("{other:?}"),
        }
        let obj: Map<String, Value> = serde_json::from_str(r#"{"lambda": "x"}"#).unwrap();
        match fit_config_from(obj) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "lambda"),
            other => panic!("{other:?}"),
        }
        let obj: Map<String, Value> = serde_json::from_str(r#"{"method": "pc"}"#).unwrap();
        assert!(matches!(fit_config_from(obj), Err(Error::Config { key, .. }) if key == "method"));
    }

    #[test]
    fn flat_config_reaches_the_solver() {
        let obj: Map<String, Value> =
            serde_json::from_str(r#"{"lambda": 0.2, "eps0": 0.001, "method": "mfgm", "K": 2}"#).unwrap();
        let (cfg, method) = fit_config_from(obj).unwrap();
        assert_eq!(cfg.solver.lambda, 0.2);
        assert_eq!(cfg.eps0, 0.001);
        assert_eq!(method, Method::Mfgm);
        assert_eq!(cfg.k, Some(BasisCounts::Uniform(2)));
    }

    #[test]
    fn grid_expansion_order() {
        let grid: BenchGrid = serde_json::from_value(serde_json::json!({
            "N": [10, 20], "P": 2, "L0": 1, "K0": 2, "lambda": 0.1,
            "method": ["mfgm"], "seeds": 2
        }))
        .unwrap();
        let jobs = expand_jobs(&grid);
        let got: Vec<(usize, u64)> = jobs.iter().map(|j| (j.n, j.seed)).collect();
        assert_eq!(got, vec![(10, 0), (10, 1), (20, 0), (20, 1)]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::config("x", "y")), EXIT_INPUT);
        assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x"))), EXIT_IO);
        let nested = Error::Iteration {
            iteration: 3,
            source: Box::new(Error::SolverNumerical("nan".into())),
        };
        assert_eq!(exit_code(&nested), EXIT_NUMERICAL);
    }
}
