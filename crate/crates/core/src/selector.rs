//! Working-model construction: marginal screening, the Dantzig selector,
//! tuning rules and threshold support recovery.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CoefficientVector, Dataset, IndexSet};
use crate::error::{QivError, Result};
use crate::linalg::select_columns;
use crate::lp::solve_dantzig;

pub const DEFAULT_LP_TOLERANCE: f64 = 1e-9;

/// Solves `min ‖β‖₁` subject to `‖Xᵀ(y − Xβ)‖∞ ≤ λ`.
///
/// `λ` lives on the `Xᵀz` scale (see [`default_lambda`]). When `β = 0` is
/// already feasible it is returned exactly.
pub fn dantzig_select(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, tol: f64) -> Result<CoefficientVector> {
    if x.nrows() != y.len() {
        return Err(QivError::LengthMismatch { expected: x.nrows(), got: y.len() });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(QivError::InvalidInput(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if !(tol > 0.0 && tol <= 1e-3) {
        return Err(QivError::InvalidInput(format!("lp tolerance must lie in (0, 1e-3], got {tol}")));
    }
    let p = x.ncols();
    let xty = x.transpose() * y;
    if xty.amax() <= lambda {
        return Ok(CoefficientVector::zeros(p));
    }
    let gram = x.transpose() * x;
    let sol = solve_dantzig(&gram, &xty, lambda, tol)?;
    let scale = sol.beta.amax().max(1.0);
    let snapped = sol.beta.map(|b| if b.abs() <= 10.0 * tol * scale { 0.0 } else { b });

    let allowed = lambda + tol * (1.0 + lambda + xty.amax());
    let violation = |b: &DVector<f64>| (&xty - &gram * b).amax();
    let beta = if violation(&snapped) <= allowed {
        snapped
    } else if violation(&sol.beta) <= allowed {
        sol.beta
    } else {
        return Err(QivError::SolverDidNotConverge(sol.iterations));
    };
    CoefficientVector::new(beta.iter().copied().collect())
}

/// Empirical maximum of `|Xᵀz|` over `n_realizations` draws of `z ~ N(0, I_n)`.
pub fn default_lambda(x: &DMatrix<f64>, n_realizations: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.nrows();
    let mut best = 0.0_f64;
    for _ in 0..n_realizations.max(1) {
        let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        best = best.max((x.transpose() * z).amax());
    }
    best
}

/// `2σ√(log p / n)`, the rate for the per-observation constraint
/// `‖Xᵀ(y − Xβ)‖∞ / n ≤ λ`. Multiply by `n` before passing to
/// [`dantzig_select`].
pub fn theoretical_lambda(sigma: f64, n: usize, p: usize) -> f64 {
    2.0 * sigma * ((p as f64).ln() / n as f64).sqrt()
}

/// `{ j : |β_j| ≥ τ, β_j ≠ 0 }`.
pub fn threshold_select(beta: &CoefficientVector, tau: f64) -> IndexSet {
    IndexSet::new(
        beta.as_slice()
            .iter()
            .enumerate()
            .filter(|(_, b)| b.abs() >= tau && **b != 0.0)
            .map(|(j, _)| j)
            .collect(),
    )
}

/// Absolute sample correlation of every column with `y`.
pub fn marginal_correlations(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>> {
    let n = x.nrows() as f64;
    let ym = y.mean();
    let yc = y.add_scalar(-ym);
    let ysd = (yc.norm_squared() / n).sqrt();
    x.column_iter()
        .enumerate()
        .map(|(j, col)| {
            let m = col.mean();
            let c = col.add_scalar(-m);
            let sd = (c.norm_squared() / n).sqrt();
            if !(sd > 1e-12 * m.abs().max(1.0)) {
                return Err(QivError::ZeroVarianceColumn(j));
            }
            if ysd == 0.0 {
                return Ok(0.0);
            }
            Ok((c.dot(&yc) / n / (sd * ysd)).abs())
        })
        .collect()
}

/// Keeps the `keep` columns with the largest absolute marginal correlation
/// with `y`; ties go to the smaller index.
pub fn sis_screen(x: &DMatrix<f64>, y: &DVector<f64>, keep: usize) -> Result<IndexSet> {
    let p = x.ncols();
    if keep == 0 || keep > p {
        return Err(QivError::InvalidInput(format!("sis keep must lie in [1, {p}], got {keep}")));
    }
    let corr = marginal_correlations(x, y)?;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| corr[b].total_cmp(&corr[a]).then(a.cmp(&b)));
    order.truncate(keep);
    Ok(IndexSet::new(order))
}

/// Residual standard deviation after least squares on the top `⌈n/2⌉`
/// screened columns, used for the theoretical tuning rule when σ is unknown.
pub fn estimate_sigma(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let n = x.nrows();
    let k = n.div_ceil(2).min(x.ncols()).min(n.saturating_sub(1)).max(1);
    let keep = sis_screen(x, y, k)?;
    let xs = select_columns(x, keep.as_slice());
    let yc = y.add_scalar(-y.mean());
    let xc = crate::linalg::center_columns(&xs);
    let qr = xc.clone().svd(true, true);
    let coef = qr
        .solve(&yc, 1e-12)
        .map_err(|e| QivError::InvalidInput(e.to_string()))?;
    let resid = &yc - &xc * coef;
    let dof = n.saturating_sub(k + 1).max(1) as f64;
    Ok((resid.norm_squared() / dof).sqrt())
}

/// How the Dantzig tuning parameter is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Maximum of `|Xᵀz|` over draws of standard normal `z`.
    Empirical { realizations: usize },
    /// `n · 2σ√(log p / n)`; σ is estimated when absent.
    Theoretical { sigma: Option<f64> },
    Fixed(f64),
}

impl Default for LambdaMode {
    fn default() -> Self {
        LambdaMode::Empirical { realizations: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectorConfig {
    pub lambda: LambdaMode,
    pub tau: f64,
    pub lp_tolerance: f64,
    pub sis_keep: Option<usize>,
    /// Seeds the empirical tuning rule.
    pub seed: u64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaMode::default(),
            tau: 0.1,
            lp_tolerance: DEFAULT_LP_TOLERANCE,
            sis_keep: None,
            seed: 0,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) {
            return Err(QivError::InvalidInput(format!("tau must be >= 0, got {}", self.tau)));
        }
        if !(self.lp_tolerance > 0.0 && self.lp_tolerance <= 1e-3) {
            return Err(QivError::InvalidInput(format!(
                "lp_tolerance must lie in (0, 1e-3], got {}",
                self.lp_tolerance
            )));
        }
        match self.lambda {
            LambdaMode::Fixed(v) if !(v > 0.0) => {
                Err(QivError::InvalidInput(format!("lambda must be > 0, got {v}")))
            }
            LambdaMode::Theoretical { sigma: Some(s) } if !(s > 0.0) => {
                Err(QivError::InvalidInput(format!("sigma must be > 0, got {s}")))
            }
            LambdaMode::Empirical { realizations: 0 } => {
                Err(QivError::InvalidInput("empirical lambda needs at least one realization".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Full-length estimate; zero outside the screened columns.
    pub beta_full: CoefficientVector,
    pub selected: IndexSet,
    pub lambda_used: f64,
    pub screened_indices: Option<IndexSet>,
    /// σ estimate used by the theoretical rule, when one was needed.
    pub sigma_estimate: Option<f64>,
    pub warnings: Vec<String>,
}

/// Screens (optionally), runs the Dantzig selector and thresholds.
///
/// An empty threshold set falls back to the single largest `|β_j|`, with a
/// warning recorded.
pub fn select(dataset: &Dataset, config: &SelectorConfig) -> Result<SelectionResult> {
    config.validate()?;
    let x = dataset.x();
    let y = dataset.y();
    let (n, p) = x.shape();
    let screened = match config.sis_keep {
        Some(k) if k < p => Some(sis_screen(x, y, k)?),
        _ => None,
    };
    let xs = match &screened {
        Some(s) => select_columns(x, s.as_slice()),
        None => x.clone(),
    };
    let mut sigma_estimate = None;
    let lambda = match &config.lambda {
        LambdaMode::Empirical { realizations } => default_lambda(&xs, *realizations, config.seed),
        LambdaMode::Theoretical { sigma } => {
            let s = match sigma {
                Some(s) => *s,
                None => {
                    let s = estimate_sigma(x, y)?;
                    sigma_estimate = Some(s);
                    s
                }
            };
            n as f64 * theoretical_lambda(s, n, xs.ncols().max(2))
        }
        LambdaMode::Fixed(v) => *v,
    };
    let beta_sub = dantzig_select(&xs, y, lambda, config.lp_tolerance)?;
    let beta_full = match &screened {
        Some(s) => {
            let mut full = vec![0.0; p];
            for (k, j) in s.iter().enumerate() {
                full[j] = beta_sub.0[k];
            }
            CoefficientVector(full)
        }
        None => beta_sub,
    };
    let mut selected = threshold_select(&beta_full, config.tau);
    let mut warnings = Vec::new();
    if selected.is_empty() {
        let fallback = largest_coefficient(&beta_full, screened.as_ref(), x, y)?;
        warnings.push(format!(
            "threshold {} selected no predictors; falling back to x{}",
            config.tau,
            fallback + 1
        ));
        selected = IndexSet::new(vec![fallback]);
    }
    Ok(SelectionResult {
        beta_full,
        selected,
        lambda_used: lambda,
        screened_indices: screened,
        sigma_estimate,
        warnings,
    })
}

fn largest_coefficient(
    beta: &CoefficientVector,
    screened: Option<&IndexSet>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<usize> {
    let best = beta
        .as_slice()
        .iter()
        .enumerate()
        .fold((0usize, 0.0_f64), |acc, (j, b)| if b.abs() > acc.1 { (j, b.abs()) } else { acc });
    if best.1 > 0.0 {
        return Ok(best.0);
    }
    // all-zero estimate: take the strongest marginal correlate
    let top = sis_screen(x, y, 1)?;
    Ok(match screened {
        Some(s) if !s.contains(top.as_slice()[0]) => s.as_slice()[0],
        _ => top.as_slice()[0],
    })
}
