//! The `qiv` command-line tool.
//!
//! Every command computes all of its outputs in memory first, writes them to
//! temporary files, renames them into place and writes `manifest.json` last.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::data::{self, format_float, standardize, Dataset, IndexSet};
use crate::error::QivError;
use crate::instrument::{CrossGram, Method};
use crate::pipeline::{self, BandwidthMode, DMode, InstrumentConfig, PipelineConfig, PipelineFit};
use crate::plm;
use crate::selector::{self, LambdaMode, SelectorConfig, DEFAULT_LP_TOLERANCE};
use crate::simulator::{self, ExperimentConfig, MetricsTable};

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Name of the environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "QIV_THREADS";

#[derive(Debug, Parser)]
#[command(name = "qiv", version, about = "Bias-corrected estimation and prediction after variable selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dantzig-selector variable selection.
    Select(SelectArgs),
    /// Selection, instrument construction and partially linear fit.
    Fit(FitArgs),
    /// Predictions from a saved fit.
    Predict(PredictArgs),
    /// Monte Carlo experiment from a JSON config.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SelectionFlags {
    /// Data CSV with header `y,x1,...,xp`.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// `empirical`, `theoretical` or a positive number.
    #[arg(long, default_value = "empirical")]
    pub lambda: String,
    /// Noise draws for the empirical rule.
    #[arg(long, default_value_t = 20)]
    pub realizations: usize,
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    /// Keep this many predictors after sure independence screening.
    #[arg(long)]
    pub sis: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_LP_TOLERANCE)]
    pub lp_tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub selection: SelectionFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    M1,
    M2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CrossGramArg {
    Full,
    RemovedBlock,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub selection: SelectionFlags,
    #[arg(long, value_enum, default_value_t = MethodArg::M1)]
    pub method: MethodArg,
    /// `auto` or a positive integer.
    #[arg(long, default_value = "auto")]
    pub d: String,
    /// Upper limit for `--d auto`.
    #[arg(long, default_value_t = 5)]
    pub d_max: usize,
    /// `gcv` or a positive bandwidth.
    #[arg(long, default_value = "gcv")]
    pub bandwidth: String,
    #[arg(long, default_value_t = 2.0)]
    pub c: f64,
    #[arg(long, default_value_t = 0.2)]
    pub ck: f64,
    #[arg(long, default_value_t = crate::instrument::DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
    #[arg(long, value_enum, default_value_t = CrossGramArg::Full)]
    pub cross_gram: CrossGramArg,
    /// Confidence level for theta.csv.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// fit.json written by `qiv fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// CSV with header `x1,...,xp`, optionally preceded by `y`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Overrides the config's `reps`.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; `QIV_THREADS` takes precedence and also applies to
    /// the other commands.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write plot.svg.
    #[arg(long)]
    pub plot: bool,
}

/// Failure of a command, mapped onto the exit codes.
#[derive(Debug)]
pub enum CliError {
    Qiv(QivError),
    Config(String),
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Qiv(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Qiv(_) | CliError::Config(_) => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Qiv(e) => e.code(),
            CliError::Config(_) => "ConfigSchema",
            CliError::Io { .. } => "Io",
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        let message = match self {
            CliError::Qiv(e) => e.to_string(),
            CliError::Config(m) => m.clone(),
            CliError::Io { path, source } => format!("{}: {source}", path.display()),
        };
        json!({ "error": self.code(), "exit_code": self.exit_code(), "message": message }).to_string()
    }
}

impl From<QivError> for CliError {
    fn from(e: QivError) -> Self {
        CliError::Qiv(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

impl FileDigest {
    fn of(file: String, content: &[u8]) -> Self {
        Self { file, sha256: sha256_hex(content), bytes: content.len() }
    }
}

/// Record of one run; its presence means every listed output is complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` pins both.
    pub started_at: u64,
    pub finished_at: u64,
    pub threads: Option<usize>,
    /// Every flag and effective numeric setting of the run.
    pub parameters: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub warnings: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Outputs of a command, held until everything has been computed.
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add(&mut self, name: &str, content: Vec<u8>) {
        self.files.push((name.to_string(), content));
    }

    fn digests(&self) -> Vec<FileDigest> {
        self.files.iter().map(|(n, c)| FileDigest::of(n.clone(), c)).collect()
    }

    /// Temp files first, then renames, then the manifest.
    fn commit(self, dir: &Path, mut manifest: RunManifest) -> CliResult<RunManifest> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        manifest.outputs = self.digests();
        manifest.finished_at = now();
        let mut manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        manifest_bytes.push(b'\n');
        let pid = std::process::id();
        let mut staged = Vec::new();
        let mut files = self.files;
        files.push(("manifest.json".to_string(), manifest_bytes));
        for (name, content) in &files {
            let tmp = dir.join(format!(".{name}.tmp-{pid}"));
            if let Err(e) = fs::write(&tmp, content) {
                for (t, _) in &staged {
                    let _ = fs::remove_file(t);
                }
                let _ = fs::remove_file(&tmp);
                return Err(CliError::Io { path: tmp, source: e });
            }
            staged.push((tmp, dir.join(name)));
        }
        for (tmp, target) in &staged {
            fs::rename(tmp, target).map_err(io_err(target))?;
        }
        Ok(manifest)
    }
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(io_err(path))?;
    Ok(buf)
}

fn input_digest(path: &Path, bytes: &[u8]) -> FileDigest {
    FileDigest::of(path.display().to_string(), bytes)
}

fn manifest_for(command: &str, seed: u64, parameters: serde_json::Value, inputs: Vec<FileDigest>, started_at: u64) -> RunManifest {
    let config_hash = sha256_hex(parameters.to_string().as_bytes());
    RunManifest {
        tool: "qiv".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_hash,
        seed,
        started_at,
        finished_at: started_at,
        threads: None,
        parameters,
        inputs,
        outputs: Vec::new(),
        warnings: Vec::new(),
    }
}

pub fn parse_lambda(text: &str, realizations: usize) -> CliResult<LambdaMode> {
    match text {
        "empirical" => Ok(LambdaMode::Empirical { realizations }),
        "theoretical" => Ok(LambdaMode::Theoretical { sigma: None }),
        other => match other.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(LambdaMode::Fixed(v)),
            _ => Err(CliError::Config(format!(
                "--lambda must be empirical, theoretical or a positive number, got \"{other}\""
            ))),
        },
    }
}

pub fn parse_d(text: &str, d_max: usize) -> CliResult<DMode> {
    match text {
        "auto" => Ok(DMode::Auto { d_max }),
        other => match other.parse::<usize>() {
            Ok(d) if d >= 1 => Ok(DMode::Fixed(d)),
            _ => Err(CliError::Config(format!("--d must be auto or a positive integer, got \"{other}\""))),
        },
    }
}

pub fn parse_bandwidth(text: &str) -> CliResult<BandwidthMode> {
    match text {
        "gcv" => Ok(BandwidthMode::Gcv { grid: None }),
        other => match other.parse::<f64>() {
            Ok(h) if h > 0.0 && h.is_finite() => Ok(BandwidthMode::Fixed(h)),
            _ => Err(CliError::Config(format!("--bandwidth must be gcv or a positive number, got \"{other}\""))),
        },
    }
}

fn selector_config(f: &SelectionFlags) -> CliResult<SelectorConfig> {
    let cfg = SelectorConfig {
        lambda: parse_lambda(&f.lambda, f.realizations)?,
        tau: f.tau,
        lp_tolerance: f.lp_tol,
        sis_keep: f.sis,
        seed: f.seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn selection_parameters(f: &SelectionFlags, cfg: &SelectorConfig) -> serde_json::Value {
    json!({
        "input": f.input.display().to_string(),
        "lambda": cfg.lambda,
        "tau": cfg.tau,
        "sis": cfg.sis_keep,
        "seed": cfg.seed,
        "lp_tol": cfg.lp_tolerance,
    })
}

fn load_dataset(path: &Path) -> CliResult<(Dataset, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let ds = data::read_csv(bytes.as_slice())?;
    Ok((ds, bytes))
}

fn csv_bytes<F>(write: F) -> Vec<u8>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        write(&mut w).expect("writing to memory");
        w.flush().expect("writing to memory");
    }
    buf
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("value serializes");
    v.push(b'\n');
    v
}

pub fn cmd_select(args: &SelectArgs) -> CliResult<RunManifest> {
    let started = now();
    let f = &args.selection;
    let cfg = selector_config(f)?;
    let (raw, bytes) = load_dataset(&f.input)?;
    let pool = worker_pool(None)?;
    let std = standardize(&raw)?;
    let sel = pool.install(|| selector::select(&std, &cfg))?;

    let all: Vec<usize> = (0..raw.p()).collect();
    let beta_raw = std.unscale_coefficients(sel.beta_full.as_slice(), &all);
    let mut out = Outputs::new();
    out.add(
        "beta_full.csv",
        csv_bytes(|w| {
            w.write_record(["index", "beta", "beta_standardized"])?;
            for (j, (b_raw, b)) in beta_raw.iter().zip(&sel.beta_full.0).enumerate() {
                w.write_record([(j + 1).to_string(), format_float(*b_raw), format_float(*b)])?;
            }
            Ok(())
        }),
    );
    out.add("selected_indices.csv", selected_csv(&sel.selected));

    let mut params = selection_parameters(f, &cfg);
    params["lambda_used"] = json!(sel.lambda_used);
    params["sigma_estimate"] = json!(sel.sigma_estimate);
    params["screened"] = json!(sel.screened_indices.as_ref().map(one_based));
    let mut manifest = manifest_for("select", f.seed, params, vec![input_digest(&f.input, &bytes)], started);
    manifest.threads = Some(pool.current_num_threads());
    manifest.warnings = sel.warnings.clone();
    out.commit(&f.out, manifest)
}

fn one_based(set: &IndexSet) -> Vec<usize> {
    set.iter().map(|j| j + 1).collect()
}

fn selected_csv(set: &IndexSet) -> Vec<u8> {
    csv_bytes(|w| {
        w.write_record(["index"])?;
        for j in set.iter() {
            w.write_record([(j + 1).to_string()])?;
        }
        Ok(())
    })
}

pub fn fit_config(args: &FitArgs) -> CliResult<PipelineConfig> {
    let cfg = PipelineConfig {
        selector: selector_config(&args.selection)?,
        instrument: InstrumentConfig {
            method: match args.method {
                MethodArg::M1 => Method::Method1,
                MethodArg::M2 => Method::Method2,
            },
            d: parse_d(&args.d, args.d_max)?,
            cross_gram: match args.cross_gram {
                CrossGramArg::Full => CrossGram::Full,
                CrossGramArg::RemovedBlock => CrossGram::RemovedBlock,
            },
            c: args.c,
            c_k: args.ck,
            rank_tol: args.rank_tol,
        },
        bandwidth: parse_bandwidth(&args.bandwidth)?,
    };
    cfg.instrument.validate()?;
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::Config(format!("--level must lie in (0, 1), got {}", args.level)));
    }
    Ok(cfg)
}

/// `index,theta,std_error,ci_lower,ci_upper,theta_standardized` on the raw
/// predictor scale, one row per selected predictor.
pub fn theta_table(fit: &PipelineFit, level: f64) -> CliResult<Vec<u8>> {
    let plm_fit = &fit.adjusted.plm;
    let ci = plm::confidence_intervals(plm_fit, level)?;
    let cols = fit.selected().as_slice();
    Ok(csv_bytes(|w| {
        w.write_record(["index", "theta", "std_error", "ci_lower", "ci_upper", "theta_standardized"])?;
        for (k, &j) in cols.iter().enumerate() {
            let s = fit.column_scales[j];
            let se = plm_fit.asym_cov[(k, k)].max(0.0).sqrt() / s;
            w.write_record([
                (j + 1).to_string(),
                format_float(fit.theta_raw[k]),
                format_float(se),
                format_float(ci[k].0 / s),
                format_float(ci[k].1 / s),
                format_float(plm_fit.theta_hat[k]),
            ])?;
        }
        Ok(())
    }))
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<RunManifest> {
    let started = now();
    let f = &args.selection;
    let cfg = fit_config(args)?;
    let (raw, bytes) = load_dataset(&f.input)?;
    let pool = worker_pool(None)?;
    let fit = pool.install(|| pipeline::fit_pipeline(&raw, &cfg))?;

    let mut out = Outputs::new();
    out.add("fit.json", json_bytes(&fit));
    out.add("theta.csv", theta_table(&fit, args.level)?);
    out.add("selected_indices.csv", selected_csv(fit.selected()));

    let mut params = selection_parameters(f, &cfg.selector);
    params["lambda_used"] = json!(fit.selection.lambda_used);
    params["method"] = json!(cfg.instrument.method);
    params["d"] = json!(cfg.instrument.d);
    params["d_used"] = json!(fit.adjusted.plan.whiten.d());
    params["instrument_rank"] = json!(fit.adjusted.plan.rank);
    params["cross_gram"] = json!(cfg.instrument.cross_gram);
    params["c"] = json!(cfg.instrument.c);
    params["ck"] = json!(cfg.instrument.c_k);
    params["rank_tol"] = json!(cfg.instrument.rank_tol);
    params["bandwidth"] = json!(cfg.bandwidth);
    params["bandwidth_used"] = json!(fit.adjusted.plm.h);
    params["level"] = json!(args.level);
    let mut manifest = manifest_for("fit", f.seed, params, vec![input_digest(&f.input, &bytes)], started);
    manifest.threads = Some(pool.current_num_threads());
    manifest.warnings = fit.selection.warnings.clone();
    if let Some(w) = fit.adjusted.d_selection.as_ref().and_then(|d| d.warning.clone()) {
        manifest.warnings.push(w);
    }
    out.commit(&f.out, manifest)
}

/// Predictor matrix from a CSV headed `x1,...,xk` or `y,x1,...,xk`.
pub fn read_predictors(bytes: &[u8]) -> CliResult<(DMatrix<f64>, Option<DVector<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = rdr.headers().map_err(|e| QivError::InvalidInput(format!("csv header: {e}")))?.clone();
    let has_y = headers.get(0) == Some("y");
    let offset = usize::from(has_y);
    for (k, h) in headers.iter().enumerate().skip(offset) {
        let want = format!("x{}", k + 1 - offset);
        if h != want {
            return Err(QivError::InvalidInput(format!("csv column {} must be named \"{want}\", found \"{h}\"", k + 1)).into());
        }
    }
    let p = headers.len() - offset;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| QivError::InvalidInput(format!("csv row {}: {e}", line + 2)))?;
        if rec.len() != headers.len() {
            return Err(QivError::InvalidInput(format!("csv row {} has {} fields", line + 2, rec.len())).into());
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| QivError::InvalidInput(format!("csv row {}: cannot parse \"{field}\"", line + 2)))?;
            if !v.is_finite() {
                return Err(QivError::InvalidInput(format!("csv row {}: non-finite value", line + 2)).into());
            }
            if has_y && k == 0 {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = xs.len() / p.max(1);
    let x = DMatrix::from_row_slice(n, p, &xs);
    Ok((x, has_y.then(|| DVector::from_vec(ys))))
}

/// Checks the column count of new data against a fit, naming missing
/// removed-predictor columns the instrument needs.
pub fn check_columns(fit: &PipelineFit, ncols: usize) -> CliResult<()> {
    if ncols == fit.p {
        return Ok(());
    }
    if ncols < fit.p {
        let u_idx = fit.selected().complement(fit.p);
        let needed = u_idx.compose(&fit.adjusted.plan.whiten.ustar_indices);
        if needed.iter().any(|j| j >= ncols) {
            return Err(QivError::MissingUStarColumns.into());
        }
    }
    Err(QivError::LengthMismatch { expected: fit.p, got: ncols }.into())
}

pub fn cmd_predict(args: &PredictArgs) -> CliResult<RunManifest> {
    let started = now();
    let fit_bytes = read_bytes(&args.fit)?;
    let fit: PipelineFit = serde_json::from_slice(&fit_bytes)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.fit.display())))?;
    let data_bytes = read_bytes(&args.input)?;
    let (x, y) = read_predictors(&data_bytes)?;
    check_columns(&fit, x.ncols())?;
    let pool = worker_pool(None)?;
    let (mut bundle, fallbacks) = pool.install(|| fit.predict(&x))?;
    if let Some(y) = &y {
        bundle.score(y.as_slice())?;
    }
    let mut out = Outputs::new();
    let mut pred = Vec::new();
    bundle.write_csv(&mut pred).expect("writing to memory");
    out.add("predictions.csv", pred);
    if y.is_some() {
        out.add(
            "prediction_error.csv",
            csv_bytes(|w| {
                w.write_record(["predictor", "pe"])?;
                for (name, v) in [("adjusted", bundle.pe_adjusted), ("working", bundle.pe_working), ("ls", bundle.pe_ls)] {
                    w.write_record([name.to_string(), v.map(format_float).unwrap_or_default()])?;
                }
                Ok(())
            }),
        );
    }
    let params = json!({
        "fit": args.fit.display().to_string(),
        "input": args.input.display().to_string(),
        "rows": x.nrows(),
        "kernel_fallbacks": fallbacks,
    });
    let inputs = vec![input_digest(&args.fit, &fit_bytes), input_digest(&args.input, &data_bytes)];
    let mut manifest = manifest_for("predict", fit.config.selector.seed, params, inputs, started);
    manifest.threads = Some(pool.current_num_threads());
    if fallbacks > 0 {
        manifest.warnings.push(format!("{fallbacks} rows fell back to uniform kernel weights"));
    }
    out.commit(&args.out, manifest)
}

/// Parses and validates an experiment config; unknown or mistyped fields are
/// reported by name.
pub fn parse_experiment_config(text: &str) -> CliResult<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Worker pool sized by `QIV_THREADS`, else the flag, else rayon's default.
fn worker_pool(flag: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = resolve_threads(flag)? {
        builder = builder.num_threads(t);
    }
    builder.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

/// Thread count from `QIV_THREADS`, else the flag.
pub fn resolve_threads(flag: Option<usize>) -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(t) if t >= 1 => Ok(Some(t)),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got \"{v}\""))),
        },
        _ => match flag {
            Some(0) => Err(CliError::Config("--threads must be positive".into())),
            other => Ok(other),
        },
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<RunManifest> {
    let started = now();
    let bytes = read_bytes(&args.config)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::Config(format!("config is not UTF-8: {e}")))?;
    let mut cfg = parse_experiment_config(&text)?;
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let pool = worker_pool(args.threads)?;
    let table = pool.install(|| simulator::run_experiment(&cfg))?;

    let mut out = Outputs::new();
    let mut metrics = Vec::new();
    table.write_csv(&mut metrics).expect("writing to memory");
    out.add("metrics.csv", metrics);
    out.add("report.json", json_bytes(&table));
    if args.plot {
        out.add("plot.svg", metrics_svg(&table).into_bytes());
    }
    let params = json!({
        "config": args.config.display().to_string(),
        "experiment": cfg,
        "sigma": table.sigma,
        "r_squared": table.r_squared,
        "plot": args.plot,
    });
    let mut manifest = manifest_for("simulate", cfg.seed, params, vec![input_digest(&args.config, &bytes)], started);
    manifest.config_hash = cfg.hash();
    manifest.threads = Some(pool.current_num_threads());
    manifest.warnings = table.warnings();
    out.commit(&args.out, manifest)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Two bar panels, mean MSE and mean PE per (estimator, predictor) row.
pub fn metrics_svg(table: &MetricsTable) -> String {
    let panel_w = 360.0;
    let panel_h = 240.0;
    let (left, top, bottom) = (60.0, 40.0, 70.0);
    let width = 2.0 * (panel_w + left) + 20.0;
    let height = top + panel_h + bottom;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    s.push_str(&format!(
        "<text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{} (n={}, p={}, reps={})</text>\n",
        width / 2.0,
        esc(&table.config.name),
        table.config.n,
        table.config.p,
        table.reps
    ));
    type Metric = fn(&simulator::MetricsRow) -> Option<f64>;
    let panels: [(&str, Metric); 2] = [("MSE", |r| r.mse), ("PE", |r| r.pe)];
    for (k, (title, get)) in panels.iter().enumerate() {
        let x0 = left + k as f64 * (panel_w + left);
        let bars: Vec<(String, f64)> = table
            .rows
            .iter()
            .filter_map(|r| get(r).map(|v| (format!("{}/{}", r.estimator, r.predictor), v)))
            .collect();
        let vmax = bars.iter().map(|b| b.1).fold(0.0_f64, f64::max);
        let scale = if vmax > 0.0 { panel_h / vmax } else { 0.0 };
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">mean {title}</text>\n",
            x0 + panel_w / 2.0,
            top - 6.0
        ));
        s.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{top}\" x2=\"{x0}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{x0}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            top + panel_h,
            top + panel_h,
            x0 + panel_w,
            top + panel_h
        ));
        for t in 0..=4 {
            let v = vmax * t as f64 / 4.0;
            let y = top + panel_h - v * scale;
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
                x0 - 4.0,
                y + 4.0,
                fmt_tick(v)
            ));
        }
        let slot = panel_w / bars.len().max(1) as f64;
        for (i, (label, v)) in bars.iter().enumerate() {
            let bh = v * scale;
            let bx = x0 + i as f64 * slot + slot * 0.15;
            s.push_str(&format!(
                "<rect x=\"{bx:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{bh:.1}\" fill=\"#4878a8\"/>\n",
                top + panel_h - bh,
                slot * 0.7
            ));
            let lx = x0 + (i as f64 + 0.5) * slot;
            let ly = top + panel_h + 12.0;
            s.push_str(&format!(
                "<text x=\"{lx:.1}\" y=\"{ly:.1}\" text-anchor=\"end\" transform=\"rotate(-35 {lx:.1} {ly:.1})\">{}</text>\n",
                esc(label)
            ));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.2e}")
    }
}

pub fn run(cli: &Cli) -> CliResult<RunManifest> {
    match &cli.command {
        Command::Select(a) => cmd_select(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(m) => {
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
