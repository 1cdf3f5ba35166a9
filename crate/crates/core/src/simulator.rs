//! Generative designs and the Monte Carlo loop.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{partition, standardize, CoefficientVector, Dataset, IndexSet};
use crate::error::{QivError, Result};
use crate::instrument::{CrossGram, Method};
use crate::linalg::select_columns;
use crate::pipeline::{fit_adjusted, BandwidthMode, DMode, InstrumentConfig};
use crate::predictor;
use crate::selector::{self, LambdaMode, SelectorConfig, DEFAULT_LP_TOLERANCE};

const TYPE_I_VALUES: [f64; 7] = [1.0, 0.4, 0.3, 0.5, 0.3, 0.3, 0.3];
const TYPE_III_VALUES: [f64; 7] = [1.0, 0.4, -0.3, -0.5, 0.3, 0.3, -0.3];
const TYPE_II_SUPPORT: [usize; 7] = [0, 16, 32, 48, 64, 80, 96];
const WIDE_VALUES: [f64; 10] = [1.0, -1.5, 2.0, 1.1, -3.0, 1.2, 1.8, -2.5, -2.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BetaType {
    I,
    II,
    III,
    /// Ten strong coefficients on the first ten predictors.
    #[serde(rename = "wide")]
    Wide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSpec {
    pub type_id: BetaType,
    /// Zero coefficients outside the true support.
    #[serde(default)]
    pub sparse: bool,
    /// Seeds the frozen draw of the small coefficients.
    #[serde(default)]
    pub seed: u64,
}

impl BetaSpec {
    /// Zero-based support and its coefficient values.
    pub fn support(&self) -> (Vec<usize>, Vec<f64>) {
        match self.type_id {
            BetaType::I => ((0..7).collect(), TYPE_I_VALUES.to_vec()),
            BetaType::II => (TYPE_II_SUPPORT.to_vec(), TYPE_I_VALUES.to_vec()),
            BetaType::III => ((0..7).collect(), TYPE_III_VALUES.to_vec()),
            BetaType::Wide => ((0..10).collect(), WIDE_VALUES.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterializedBeta {
    pub beta: CoefficientVector,
    pub i_true: IndexSet,
}

/// Exact values on the support; elsewhere `max(U(−0.5, 0.15), 0)` draws in
/// index order, or zeros when sparse.
pub fn gen_coefficients(spec: &BetaSpec, p: usize) -> Result<MaterializedBeta> {
    let (support, values) = spec.support();
    let need = support.last().map_or(0, |m| m + 1);
    if need > p {
        return Err(QivError::IncompatibleDimensions(format!(
            "coefficient type {:?} needs p >= {need}, got {p}",
            spec.type_id
        )));
    }
    let i_true = IndexSet::new(support.clone());
    let mut beta = vec![0.0; p];
    if !spec.sparse {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let dist = Uniform::new(-0.5_f64, 0.15).expect("valid range");
        for (j, b) in beta.iter_mut().enumerate() {
            if !i_true.contains(j) {
                *b = dist.sample(&mut rng).max(0.0);
            }
        }
    }
    for (j, v) in support.iter().zip(values) {
        beta[*j] = v;
    }
    Ok(MaterializedBeta { beta: CoefficientVector(beta), i_true })
}

/// Mean vector: 0 on the true support, 2 elsewhere.
pub fn design_means(p: usize, i_true: &IndexSet) -> Vec<f64> {
    (0..p).map(|j| if i_true.contains(j) { 0.0 } else { 2.0 }).collect()
}

/// `Σ_ij = (−ρ)^{|i−j|}`.
pub fn ar1_covariance(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| (-rho).powi(i.abs_diff(j) as i32))
}

/// Rows from `N(μ, Σ)` with `Σ_ij = (−ρ)^{|i−j|}`, drawn through the
/// AR(1) recursion `x_j = −ρ x_{j−1} + √(1−ρ²) e_j`.
pub fn gen_design_rng<R: Rng + ?Sized>(n: usize, p: usize, rho: f64, mu: &[f64], rng: &mut R) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(QivError::InvalidInput(format!("|rho| must be < 1, got {rho}")));
    }
    if mu.len() != p {
        return Err(QivError::LengthMismatch { expected: p, got: mu.len() });
    }
    let phi = -rho;
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..p {
            let e: f64 = StandardNormal.sample(rng);
            let cur = if j == 0 { e } else { phi * prev + innov * e };
            x[(i, j)] = cur + mu[j];
            prev = cur;
        }
    }
    Ok(x)
}

pub fn gen_design(n: usize, p: usize, rho: f64, mu: &[f64], seed: u64) -> Result<DMatrix<f64>> {
    gen_design_rng(n, p, rho, mu, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn gen_response_rng<R: Rng + ?Sized>(x: &DMatrix<f64>, beta: &CoefficientVector, sigma: f64, rng: &mut R) -> Result<DVector<f64>> {
    if beta.len() != x.ncols() {
        return Err(QivError::LengthMismatch { expected: x.ncols(), got: beta.len() });
    }
    if !(sigma >= 0.0) {
        return Err(QivError::InvalidInput(format!("sigma must be >= 0, got {sigma}")));
    }
    let mean = x * DVector::from_column_slice(beta.as_slice());
    Ok(DVector::from_fn(x.nrows(), |i, _| {
        let e: f64 = StandardNormal.sample(rng);
        mean[i] + sigma * e
    }))
}

/// `y = Xβ + σε` with standard normal `ε`.
pub fn gen_response(x: &DMatrix<f64>, beta: &CoefficientVector, sigma: f64, seed: u64) -> Result<DVector<f64>> {
    gen_response_rng(x, beta, sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn signal_variance(beta: &CoefficientVector, sigma_x: &DMatrix<f64>) -> f64 {
    let b = DVector::from_column_slice(beta.as_slice());
    (b.transpose() * sigma_x * &b)[(0, 0)]
}

/// `βᵀΣβ / (βᵀΣβ + σ²)`.
pub fn r_squared(beta: &CoefficientVector, sigma_x: &DMatrix<f64>, sigma: f64) -> f64 {
    let s = signal_variance(beta, sigma_x);
    let total = s + sigma * sigma;
    if total > 0.0 {
        s / total
    } else {
        0.0
    }
}

/// Noise level giving the target model R².
pub fn sigma_for_r2(beta: &CoefficientVector, sigma_x: &DMatrix<f64>, target_r2: f64) -> Result<f64> {
    if !(target_r2 > 0.0 && target_r2 < 1.0) {
        return Err(QivError::InvalidInput(format!("target R^2 must lie in (0, 1), got {target_r2}")));
    }
    let s = signal_variance(beta, sigma_x);
    if !(s > 0.0) {
        return Err(QivError::ZeroSignal);
    }
    Ok((s * (1.0 - target_r2) / target_r2).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodFlags {
    pub m1: bool,
    pub m2: bool,
    pub ds_baseline: bool,
    pub ls_baseline: bool,
}

impl Default for MethodFlags {
    fn default() -> Self {
        Self { m1: true, m2: true, ds_baseline: true, ls_baseline: true }
    }
}

/// What the coefficient error is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseTarget {
    /// True coefficients at the selected indices.
    #[default]
    Selected,
    /// True-support coefficients at the selected indices, zero elsewhere.
    TrueSupport,
}

fn default_tau() -> f64 {
    0.1
}
fn default_test_size() -> usize {
    1000
}
fn default_c() -> f64 {
    2.0
}
fn default_c_k() -> f64 {
    0.2
}
fn default_rank_tol() -> f64 {
    crate::instrument::DEFAULT_RANK_TOL
}
fn default_lp_tolerance() -> f64 {
    DEFAULT_LP_TOLERANCE
}
fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub beta: BetaSpec,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub target_r2: Option<f64>,
    pub reps: usize,
    #[serde(default)]
    pub methods: MethodFlags,
    #[serde(default)]
    pub lambda: LambdaMode,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub d_mode: DMode,
    #[serde(default)]
    pub sis_keep: Option<usize>,
    pub seed: u64,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_c_k")]
    pub c_k: f64,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default)]
    pub cross_gram: CrossGram,
    #[serde(default)]
    pub bandwidth: BandwidthMode,
    #[serde(default = "default_lp_tolerance")]
    pub lp_tolerance: f64,
    #[serde(default)]
    pub mse_target: MseTarget,
}

impl ExperimentConfig {
    /// A small design with every default filled in.
    pub fn new(n: usize, p: usize, rho: f64, beta: BetaSpec, reps: usize, seed: u64) -> Self {
        Self {
            name: default_name(),
            n,
            p,
            rho,
            beta,
            sigma: None,
            target_r2: Some(0.97),
            reps,
            methods: MethodFlags::default(),
            lambda: LambdaMode::default(),
            tau: default_tau(),
            d_mode: DMode::default(),
            sis_keep: None,
            seed,
            test_size: default_test_size(),
            c: default_c(),
            c_k: default_c_k(),
            rank_tol: default_rank_tol(),
            cross_gram: CrossGram::default(),
            bandwidth: BandwidthMode::default(),
            lp_tolerance: default_lp_tolerance(),
            mse_target: MseTarget::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QivError::InvalidInput(m));
        if self.reps == 0 {
            return bad("reps must be >= 1".into());
        }
        if self.n < 3 {
            return bad(format!("n must be >= 3, got {}", self.n));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        match (self.sigma, self.target_r2) {
            (Some(s), None) if !(s >= 0.0 && s.is_finite()) => return bad(format!("sigma must be >= 0, got {s}")),
            (None, Some(r)) if !(r > 0.0 && r < 1.0) => return bad(format!("target_r2 must lie in (0, 1), got {r}")),
            (Some(_), Some(_)) | (None, None) => return bad("exactly one of sigma and target_r2 must be given".into()),
            _ => {}
        }
        if self.test_size == 0 {
            return bad("test_size must be >= 1".into());
        }
        let m = &self.methods;
        if !(m.m1 || m.m2 || m.ds_baseline || m.ls_baseline) {
            return bad("at least one method must be enabled".into());
        }
        if let Some(k) = self.sis_keep {
            if k == 0 {
                return bad("sis_keep must be >= 1".into());
            }
        }
        self.selector_config(0).validate()?;
        self.instrument_config(Method::Method1).validate()?;
        if let BandwidthMode::Fixed(h) = self.bandwidth {
            if !(h > 0.0) {
                return bad(format!("bandwidth must be > 0, got {h}"));
            }
        }
        gen_coefficients(&self.beta, self.p)?;
        Ok(())
    }

    fn selector_config(&self, seed: u64) -> SelectorConfig {
        SelectorConfig {
            lambda: self.lambda.clone(),
            tau: self.tau,
            lp_tolerance: self.lp_tolerance,
            sis_keep: self.sis_keep,
            seed,
        }
    }

    fn instrument_config(&self, method: Method) -> InstrumentConfig {
        InstrumentConfig { method, d: self.d_mode, cross_gram: self.cross_gram, c: self.c, c_k: self.c_k, rank_tol: self.rank_tol }
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Outcome of one replication. Indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub error: Option<String>,
    pub selected: Vec<usize>,
    pub lambda: Option<f64>,
    /// `(estimator, predictor) -> (mse, pe)`.
    pub cells: BTreeMap<String, (Option<f64>, Option<f64>)>,
    pub kernel_fallbacks: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub estimator: String,
    pub predictor: String,
    pub mse: Option<f64>,
    pub std_mse: Option<f64>,
    pub pe: Option<f64>,
    pub std_pe: Option<f64>,
    pub reps_ok: usize,
    pub reps_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub reps: usize,
    pub sigma: f64,
    pub r_squared: f64,
    pub beta_true: Vec<f64>,
    pub rows: Vec<MetricsRow>,
    /// One-based predictor index and how many replications selected it.
    pub selection_frequency: Vec<(usize, usize)>,
    pub reps_failed: usize,
    pub records: Vec<RepRecord>,
}

impl MetricsTable {
    pub fn row(&self, estimator: &str, predictor: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.predictor == predictor)
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.records {
            if let Some(e) = &r.error {
                out.push(format!("replication {} failed: {e}", r.rep));
            }
            for w in &r.warnings {
                out.push(format!("replication {}: {w}", r.rep));
            }
            if r.kernel_fallbacks > 0 {
                out.push(format!("replication {}: {} kernel weight fallbacks", r.rep, r.kernel_fallbacks));
            }
        }
        out
    }

    /// `estimator,predictor,mse,std_mse,pe,std_pe,reps_ok,reps_failed`.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["estimator", "predictor", "mse", "std_mse", "pe", "std_pe", "reps_ok", "reps_failed"])?;
        let f = |v: Option<f64>| v.map(crate::data::format_float).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.estimator.clone(),
                r.predictor.clone(),
                f(r.mse),
                f(r.std_mse),
                f(r.pe),
                f(r.std_pe),
                r.reps_ok.to_string(),
                r.reps_failed.to_string(),
            ])?;
        }
        w.flush()
    }
}

fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn sq_err(est: &[f64], target: &[f64]) -> f64 {
    est.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum()
}

struct Truth<'a> {
    beta: &'a MaterializedBeta,
    mu: &'a [f64],
    sigma: f64,
}

fn run_replication(cfg: &ExperimentConfig, truth: &Truth, rep: usize) -> Result<RepRecord> {
    let mut rng = rep_rng(cfg.seed, rep);
    let x = gen_design_rng(cfg.n, cfg.p, cfg.rho, truth.mu, &mut rng)?;
    let y = gen_response_rng(&x, &truth.beta.beta, truth.sigma, &mut rng)?;
    let x_test = gen_design_rng(cfg.test_size, cfg.p, cfg.rho, truth.mu, &mut rng)?;
    let y_test = gen_response_rng(&x_test, &truth.beta.beta, truth.sigma, &mut rng)?;
    let selector_seed = rng.next_u64();

    let std = standardize(&Dataset::new(x.clone(), y.clone())?)?;
    let selection = selector::select(&std, &cfg.selector_config(selector_seed))?;
    let sel = &selection.selected;
    let cols = sel.as_slice();
    let scales: Vec<f64> = cols.iter().map(|&j| std.column_scales()[j]).collect();
    let target: Vec<f64> = cols
        .iter()
        .map(|&j| match cfg.mse_target {
            MseTarget::Selected => truth.beta.beta.0[j],
            MseTarget::TrueSupport if truth.beta.i_true.contains(j) => truth.beta.beta.0[j],
            MseTarget::TrueSupport => 0.0,
        })
        .collect();
    let part = partition(std.x(), sel)?;
    let xt_std = std.transform(&x_test)?;
    let part_test = partition(&xt_std, sel)?;
    let y_test_slice = y_test.as_slice();

    let mut cells = BTreeMap::new();
    let mut fallbacks = 0;
    let mut warnings = selection.warnings.clone();
    for (flag, method) in [(cfg.methods.m1, Method::Method1), (cfg.methods.m2, Method::Method2)] {
        if !flag {
            continue;
        }
        let fit = fit_adjusted(&part.z, &part.u, &y, &cfg.instrument_config(method), &cfg.bandwidth)?;
        if let Some(w) = fit.d_selection.as_ref().and_then(|d| d.warning.clone()) {
            warnings.push(w);
        }
        let theta_raw: Vec<f64> = fit.plm.theta_hat.iter().zip(&scales).map(|(t, s)| t / s).collect();
        let mse = sq_err(&theta_raw, &target);
        let (adj, fb) = predictor::predict_adjusted_counted(&fit.plm, &fit.plan, &part_test.z, &part_test.u)?;
        fallbacks += fb;
        let work = predictor::predict_working(&fit.plm, &part_test.z)?;
        let label = method.label().to_string();
        cells.insert(format!("{label}/adjusted"), (Some(mse), Some(predictor::prediction_error(y_test_slice, adj.as_slice())?)));
        cells.insert(format!("{label}/working"), (Some(mse), Some(predictor::prediction_error(y_test_slice, work.as_slice())?)));
    }
    if cfg.methods.ds_baseline {
        let ds_raw: Vec<f64> = cols.iter().zip(&scales).map(|(&j, s)| selection.beta_full.0[j] / s).collect();
        cells.insert("ds/none".into(), (Some(sq_err(&ds_raw, &target)), None));
    }
    if cfg.methods.ls_baseline {
        let z_raw = select_columns(&x, cols);
        let theta = predictor::ls_coefficients(&z_raw, &y)?;
        let pred = select_columns(&x_test, cols) * &theta;
        cells.insert(
            "ls/ls".into(),
            (Some(sq_err(theta.as_slice(), &target)), Some(predictor::prediction_error(y_test_slice, pred.as_slice())?)),
        );
    }
    Ok(RepRecord {
        rep,
        error: None,
        selected: cols.to_vec(),
        lambda: Some(selection.lambda_used),
        cells,
        kernel_fallbacks: fallbacks,
        warnings,
    })
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (Some(m), Some(sd))
}

fn row_keys(m: &MethodFlags) -> Vec<(&'static str, &'static str)> {
    let mut keys = Vec::new();
    if m.m1 {
        keys.extend([("m1", "adjusted"), ("m1", "working")]);
    }
    if m.m2 {
        keys.extend([("m2", "adjusted"), ("m2", "working")]);
    }
    if m.ds_baseline {
        keys.push(("ds", "none"));
    }
    if m.ls_baseline {
        keys.push(("ls", "ls"));
    }
    keys
}

/// Runs all replications (in parallel on the current rayon pool) and
/// aggregates them by replication index.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsTable> {
    config.validate()?;
    let beta = gen_coefficients(&config.beta, config.p)?;
    let sigma_x = ar1_covariance(config.p, config.rho);
    let sigma = match (config.sigma, config.target_r2) {
        (Some(s), _) => s,
        (None, Some(r)) => sigma_for_r2(&beta.beta, &sigma_x, r)?,
        (None, None) => unreachable!("validated"),
    };
    let r2 = r_squared(&beta.beta, &sigma_x, sigma);
    let mu = design_means(config.p, &beta.i_true);
    let truth = Truth { beta: &beta, mu: &mu, sigma };

    let records: Vec<RepRecord> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            run_replication(config, &truth, rep).unwrap_or_else(|e| RepRecord {
                rep,
                error: Some(format!("{}: {e}", e.code())),
                selected: vec![],
                lambda: None,
                cells: BTreeMap::new(),
                kernel_fallbacks: 0,
                warnings: vec![],
            })
        })
        .collect();

    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed * 5 > config.reps {
        return Err(QivError::TooManyFailures { failed, total: config.reps });
    }
    let ok: Vec<&RepRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let rows = row_keys(&config.methods)
        .into_iter()
        .map(|(est, pred)| {
            let key = format!("{est}/{pred}");
            let mses: Vec<f64> = ok.iter().filter_map(|r| r.cells.get(&key).and_then(|c| c.0)).collect();
            let pes: Vec<f64> = ok.iter().filter_map(|r| r.cells.get(&key).and_then(|c| c.1)).collect();
            let (mse, std_mse) = mean_sd(&mses);
            let (pe, std_pe) = mean_sd(&pes);
            MetricsRow {
                estimator: est.into(),
                predictor: pred.into(),
                mse,
                std_mse,
                pe,
                std_pe,
                reps_ok: ok.len(),
                reps_failed: failed,
            }
        })
        .collect();
    let mut freq = BTreeMap::new();
    for r in &ok {
        for j in &r.selected {
            *freq.entry(j + 1).or_insert(0usize) += 1;
        }
    }
    Ok(MetricsTable {
        config_hash: config.hash(),
        seed: config.seed,
        reps: config.reps,
        sigma,
        r_squared: r2,
        beta_true: beta.beta.0.clone(),
        rows,
        selection_frequency: freq.into_iter().collect(),
        reps_failed: failed,
        records,
        config: config.clone(),
    })
}
