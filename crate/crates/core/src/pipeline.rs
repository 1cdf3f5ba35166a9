//! End-to-end fit: standardize, select, build the instrument, fit the
//! partially linear model. Predictions on raw data reuse the stored maps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{partition, standardize, Dataset, IndexSet};
use crate::error::{QivError, Result};
use crate::instrument::{self, CrossGram, DSelection, InstrumentPlan, Method, DEFAULT_RANK_TOL};
use crate::linalg::select_columns;
use crate::plm::{self, GcvResult, PlmFit};
use crate::predictor;
use crate::selector::{self, SelectionResult, SelectorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DMode {
    Auto { d_max: usize },
    Fixed(usize),
}

impl Default for DMode {
    fn default() -> Self {
        DMode::Auto { d_max: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    /// Default geometric grid unless one is given.
    Gcv { grid: Option<Vec<f64>> },
    Fixed(f64),
}

impl Default for BandwidthMode {
    fn default() -> Self {
        BandwidthMode::Gcv { grid: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstrumentConfig {
    pub method: Method,
    /// Method 1 only; Method 2 always uses one removed predictor.
    pub d: DMode,
    /// Method 1 only.
    pub cross_gram: CrossGram,
    pub c: f64,
    pub c_k: f64,
    pub rank_tol: f64,
}

impl Default for InstrumentConfig {
    fn default() -> Self {
        Self { method: Method::Method1, d: DMode::default(), cross_gram: CrossGram::default(), c: 2.0, c_k: 0.2, rank_tol: DEFAULT_RANK_TOL }
    }
}

impl InstrumentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c_k > 0.0) {
            return Err(QivError::InvalidInput(format!("c and c_k must be positive, got {} and {}", self.c, self.c_k)));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(QivError::InvalidInput(format!("rank_tol must lie in (0, 1), got {}", self.rank_tol)));
        }
        match self.d {
            DMode::Auto { d_max: 0 } | DMode::Fixed(0) => Err(QivError::InvalidInput("d must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub selector: SelectorConfig,
    pub instrument: InstrumentConfig,
    pub bandwidth: BandwidthMode,
}

/// Instrument and partially linear fit on an already partitioned sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedFit {
    pub plan: InstrumentPlan,
    pub plm: PlmFit,
    pub d_selection: Option<DSelection>,
    pub gcv: Option<GcvResult>,
}

/// Builds `V` from `(Z, U)` and fits `Y = θᵀZ + g(V) + ξ`.
pub fn fit_adjusted(
    z: &DMatrix<f64>,
    u: &DMatrix<f64>,
    y: &DVector<f64>,
    instrument_cfg: &InstrumentConfig,
    bandwidth: &BandwidthMode,
) -> Result<AdjustedFit> {
    instrument_cfg.validate()?;
    let mut d_selection = None;
    let (plan, v) = match instrument_cfg.method {
        Method::Method1 => {
            let d = match instrument_cfg.d {
                DMode::Fixed(d) => d,
                DMode::Auto { d_max } => {
                    let sel = instrument::select_d(z, u, d_max, instrument_cfg.rank_tol)?;
                    let d = sel.d;
                    d_selection = Some(sel);
                    d
                }
            };
            instrument::build_instrument_m1_with(z, u, d, instrument_cfg.rank_tol, instrument_cfg.cross_gram)?
        }
        Method::Method2 => {
            instrument::build_instrument_m2(z, u, instrument_cfg.c, instrument_cfg.c_k, instrument_cfg.rank_tol)?
        }
    };
    let (h, gcv) = match bandwidth {
        BandwidthMode::Fixed(h) => (*h, None),
        BandwidthMode::Gcv { grid } => {
            let grid = grid.clone().unwrap_or_else(|| plm::default_grid(&v));
            let res = plm::gcv_bandwidth(z, y, &v, &grid)?;
            (res.h, Some(res))
        }
    };
    let fit = plm::fit_plm(z, y, &v, h, Some(&plan.q12))?;
    Ok(AdjustedFit { plan, plm: fit, d_selection, gcv })
}

/// Everything needed to predict from raw predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineFit {
    pub config: PipelineConfig,
    pub p: usize,
    pub column_means: Vec<f64>,
    pub column_scales: Vec<f64>,
    pub selection: SelectionResult,
    pub adjusted: AdjustedFit,
    /// `θ̂` divided by the column scales of the selected predictors.
    pub theta_raw: Vec<f64>,
    /// Working-model least squares on raw `Z` and raw `Y`.
    pub ls_theta: Vec<f64>,
}

impl PipelineFit {
    pub fn selected(&self) -> &IndexSet {
        &self.selection.selected
    }

    fn standardize_new(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_raw.ncols() != self.p {
            return Err(QivError::LengthMismatch { expected: self.p, got: x_raw.ncols() });
        }
        Ok(DMatrix::from_fn(x_raw.nrows(), self.p, |i, j| {
            (x_raw[(i, j)] - self.column_means[j]) / self.column_scales[j]
        }))
    }

    /// Predictions on raw predictors, plus the count of kernel fallbacks.
    pub fn predict(&self, x_raw: &DMatrix<f64>) -> Result<(predictor::PredictionBundle, usize)> {
        let xs = self.standardize_new(x_raw)?;
        let part = partition(&xs, &self.selection.selected)?;
        let (adjusted, fallbacks) =
            predictor::predict_adjusted_counted(&self.adjusted.plm, &self.adjusted.plan, &part.z, &part.u)?;
        let working = predictor::predict_working(&self.adjusted.plm, &part.z)?;
        let z_raw = select_columns(x_raw, self.selection.selected.as_slice());
        let ls = z_raw * DVector::from_column_slice(&self.ls_theta);
        Ok((predictor::PredictionBundle::new(adjusted, working, ls), fallbacks))
    }
}

/// Runs the whole procedure on raw data.
pub fn fit_pipeline(raw: &Dataset, config: &PipelineConfig) -> Result<PipelineFit> {
    let std = standardize(raw)?;
    let selection = selector::select(&std, &config.selector)?;
    let part = partition(std.x(), &selection.selected)?;
    let y_raw = std.raw_y();
    let adjusted = fit_adjusted(&part.z, &part.u, &y_raw, &config.instrument, &config.bandwidth)?;
    let cols = selection.selected.as_slice();
    let theta_raw = std.unscale_coefficients(&adjusted.plm.theta_hat, cols);
    let z_raw = select_columns(&DMatrix::from_fn(raw.n(), raw.p(), |i, j| {
        std.x()[(i, j)] * std.column_scales()[j] + std.column_means()[j]
    }), cols);
    let ls_theta = predictor::ls_coefficients(&z_raw, &y_raw)?;
    Ok(PipelineFit {
        config: config.clone(),
        p: raw.p(),
        column_means: std.column_means().iter().copied().collect(),
        column_scales: std.column_scales().iter().copied().collect(),
        selection,
        adjusted,
        theta_raw,
        ls_theta: ls_theta.iter().copied().collect(),
    })
}
