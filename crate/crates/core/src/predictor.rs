//! Adjusted, working-model and least-squares predictors and their
//! empirical prediction errors.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::format_float;
use crate::error::{QivError, Result};
use crate::instrument::InstrumentPlan;
use crate::linalg::{self, EPS_PD};
use crate::plm::PlmFit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    pub y_adjusted: Vec<f64>,
    pub y_working: Vec<f64>,
    pub y_ls: Vec<f64>,
    pub pe_adjusted: Option<f64>,
    pub pe_working: Option<f64>,
    pub pe_ls: Option<f64>,
}

impl PredictionBundle {
    pub fn new(adjusted: DVector<f64>, working: DVector<f64>, ls: DVector<f64>) -> Self {
        Self {
            y_adjusted: adjusted.iter().copied().collect(),
            y_working: working.iter().copied().collect(),
            y_ls: ls.iter().copied().collect(),
            pe_adjusted: None,
            pe_working: None,
            pe_ls: None,
        }
    }

    /// Fills in the three prediction errors against `y_true`.
    pub fn score(&mut self, y_true: &[f64]) -> Result<()> {
        self.pe_adjusted = Some(prediction_error(y_true, &self.y_adjusted)?);
        self.pe_working = Some(prediction_error(y_true, &self.y_working)?);
        self.pe_ls = Some(prediction_error(y_true, &self.y_ls)?);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y_adjusted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_adjusted.is_empty()
    }

    /// `row_id,y_adjusted,y_working,y_ls` with one-based row ids.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row_id", "y_adjusted", "y_working", "y_ls"])?;
        for i in 0..self.len() {
            w.write_record([
                (i + 1).to_string(),
                format_float(self.y_adjusted[i]),
                format_float(self.y_working[i]),
                format_float(self.y_ls[i]),
            ])?;
        }
        w.flush()
    }
}

/// `Ŷ = θ̂ᵀZ + ĝ(V)` with `V` from the stored plan.
pub fn predict_adjusted(fit: &PlmFit, plan: &InstrumentPlan, z_new: &DMatrix<f64>, u_new: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(predict_adjusted_counted(fit, plan, z_new, u_new)?.0)
}

/// As [`predict_adjusted`], also returning how many rows fell back to
/// uniform kernel weights.
pub fn predict_adjusted_counted(
    fit: &PlmFit,
    plan: &InstrumentPlan,
    z_new: &DMatrix<f64>,
    u_new: &DMatrix<f64>,
) -> Result<(DVector<f64>, usize)> {
    check_z(fit, z_new)?;
    let v_new = plan.instrument(z_new, u_new)?;
    let (g, fallbacks) = fit.g_at(&v_new)?;
    Ok((z_new * fit.theta() + g, fallbacks))
}

/// `Ŷ_S = θ̂ᵀZ + ḡ`.
pub fn predict_working(fit: &PlmFit, z_new: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_z(fit, z_new)?;
    Ok((z_new * fit.theta()).add_scalar(fit.g_bar))
}

fn check_z(fit: &PlmFit, z_new: &DMatrix<f64>) -> Result<()> {
    if z_new.ncols() != fit.q() {
        return Err(QivError::LengthMismatch { expected: fit.q(), got: z_new.ncols() });
    }
    Ok(())
}

/// `θ̃_S = (ZᵀZ)⁻¹ZᵀY`, no intercept.
pub fn ls_coefficients(z_train: &DMatrix<f64>, y_train: &DVector<f64>) -> Result<DVector<f64>> {
    if y_train.len() != z_train.nrows() {
        return Err(QivError::LengthMismatch { expected: z_train.nrows(), got: y_train.len() });
    }
    let gram = z_train.transpose() * z_train;
    if !(linalg::min_eigenvalue(&gram) > EPS_PD) {
        return Err(QivError::SingularDesign);
    }
    let rhs = z_train.transpose() * y_train;
    let sol = linalg::solve_spd(&gram, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))
        .ok_or(QivError::SingularDesign)?;
    Ok(sol.column(0).into_owned())
}

/// `Ỹ_S = θ̃_Sᵀ Z_new`.
pub fn predict_ls(z_train: &DMatrix<f64>, y_train: &DVector<f64>, z_new: &DMatrix<f64>) -> Result<DVector<f64>> {
    let theta = ls_coefficients(z_train, y_train)?;
    if z_new.ncols() != theta.len() {
        return Err(QivError::LengthMismatch { expected: theta.len(), got: z_new.ncols() });
    }
    Ok(z_new * theta)
}

/// Mean squared difference.
pub fn prediction_error(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(QivError::LengthMismatch { expected: y_true.len(), got: y_pred.len() });
    }
    if y_true.is_empty() {
        return Err(QivError::InvalidInput("prediction error needs at least one value".into()));
    }
    Ok(y_true.iter().zip(y_pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y_true.len() as f64)
}
