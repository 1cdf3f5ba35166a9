//! Partially linear estimation of `Y = θᵀZ + g(V) + ξ` with Nadaraya–Watson
//! smoothing on `V`, GCV bandwidth choice and normal-theory intervals.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{QivError, Result};
use crate::linalg::{self, EPS_PD};

/// Gaussian product kernel with a common bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub bandwidth: f64,
    pub dim: usize,
}

impl KernelSpec {
    pub fn new(bandwidth: f64, dim: usize) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(QivError::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { bandwidth, dim })
    }

    /// `ln L_H(Δ)` for the normalized product kernel `h^{-r} Π K(Δ_j / h)`.
    fn log_density(&self, sq_dist: f64) -> f64 {
        let r = self.dim as f64;
        let h = self.bandwidth;
        -sq_dist / (2.0 * h * h) - r * h.ln() - 0.5 * r * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Normalized kernel weights at one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct NwWeights {
    pub weights: Vec<f64>,
    /// Set when `Σ_k L_H(V_k − v) < 1e-300` and uniform weights were used.
    pub fallback: bool,
}

const DEGENERATE_LOG_MASS: f64 = -690.775_527_898_213_7; // ln(1e-300)

/// Weights `w_k ∝ L_H(V_k − v)` over the training rows.
pub fn nw_weights(v_eval: &[f64], v_train: &DMatrix<f64>, h: f64) -> NwWeights {
    let (n, r) = v_train.shape();
    let spec = KernelSpec { bandwidth: h, dim: r };
    let logs: Vec<f64> = (0..n)
        .map(|k| {
            let sq: f64 = (0..r).map(|j| (v_train[(k, j)] - v_eval[j]).powi(2)).sum();
            spec.log_density(sq)
        })
        .collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rel: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
    let total: f64 = rel.iter().sum();
    if !(peak + total.ln() >= DEGENERATE_LOG_MASS) {
        return NwWeights { weights: vec![1.0 / n as f64; n], fallback: true };
    }
    NwWeights { weights: rel.into_iter().map(|w| w / total).collect(), fallback: false }
}

/// Smoother matrix with row `i` holding the weights at `eval` row `i`.
///
/// Returns the matrix and the number of rows that fell back to uniform weights.
pub fn smoother_matrix(eval: &DMatrix<f64>, v_train: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, usize) {
    let rows: Vec<NwWeights> = (0..eval.nrows())
        .into_par_iter()
        .map(|i| {
            let point: Vec<f64> = eval.row(i).iter().copied().collect();
            nw_weights(&point, v_train, h)
        })
        .collect();
    let fallbacks = rows.iter().filter(|w| w.fallback).count();
    let n = v_train.nrows();
    let m = DMatrix::from_fn(eval.nrows(), n, |i, k| rows[i].weights[k]);
    (m, fallbacks)
}

/// Leave-in Nadaraya–Watson fit of `values` on `V`, evaluated at every training row.
pub fn nw_smooth(values: &DVector<f64>, v_train: &DMatrix<f64>, h: f64) -> DVector<f64> {
    smoother_matrix(v_train, v_train, h).0 * values
}

/// Fitted bias-corrected model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlmFit {
    pub theta_hat: Vec<f64>,
    pub h: f64,
    #[serde(with = "crate::matrix_json")]
    pub v_train: DMatrix<f64>,
    /// `Y_i − θ̂ᵀZ_i`; `ĝ(v)` is their kernel-weighted average.
    pub g_residual_table: Vec<f64>,
    /// Mean of `ξ̂²`.
    pub sigma_v_sq: f64,
    /// Estimated covariance of `θ̂`.
    #[serde(with = "crate::matrix_json")]
    pub asym_cov: DMatrix<f64>,
    /// Covariance written with `Q̂₁₂`, available when `dim V = q`.
    pub theorem_cov: Option<Vec<Vec<f64>>>,
    /// Mean of `ĝ` over the training `V`.
    pub g_bar: f64,
    /// In-sample `ĝ(V_i)`.
    pub g_train: Vec<f64>,
    pub weighted: bool,
}

impl PlmFit {
    pub fn q(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn theta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta_hat)
    }

    /// `ĝ` at new points, plus the count of degenerate-weight fallbacks.
    pub fn g_at(&self, v_new: &DMatrix<f64>) -> Result<(DVector<f64>, usize)> {
        if v_new.ncols() != self.v_train.ncols() {
            return Err(QivError::LengthMismatch { expected: self.v_train.ncols(), got: v_new.ncols() });
        }
        let (s, fallbacks) = smoother_matrix(v_new, &self.v_train, self.h);
        Ok((s * DVector::from_column_slice(&self.g_residual_table), fallbacks))
    }
}

fn check_inputs(z: &DMatrix<f64>, y: &DVector<f64>, v: &DMatrix<f64>, h: f64) -> Result<()> {
    let n = z.nrows();
    if y.len() != n {
        return Err(QivError::LengthMismatch { expected: n, got: y.len() });
    }
    if v.nrows() != n {
        return Err(QivError::LengthMismatch { expected: n, got: v.nrows() });
    }
    KernelSpec::new(h, v.ncols())?;
    Ok(())
}

struct Residualized {
    smoother: DMatrix<f64>,
    y_hat: DVector<f64>,
    z_hat: DMatrix<f64>,
}

fn residualize(z: &DMatrix<f64>, y: &DVector<f64>, v: &DMatrix<f64>, h: f64) -> Residualized {
    let (smoother, _) = smoother_matrix(v, v, h);
    let y_hat = y - &smoother * y;
    let z_hat = z - &smoother * z;
    Residualized { smoother, y_hat, z_hat }
}

fn finish(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    v: &DMatrix<f64>,
    h: f64,
    q12: Option<&DMatrix<f64>>,
    res: &Residualized,
    weights: Option<&DVector<f64>>,
) -> Result<PlmFit> {
    let n = z.nrows() as f64;
    let zw = match weights {
        Some(w) => DMatrix::from_fn(res.z_hat.nrows(), res.z_hat.ncols(), |i, j| res.z_hat[(i, j)] * w[i]),
        None => res.z_hat.clone(),
    };
    let s_n = zw.transpose() * &res.z_hat / n;
    let min_eig = linalg::min_eigenvalue(&s_n);
    if !(min_eig > EPS_PD) {
        return Err(QivError::SingularResidualGram(min_eig));
    }
    let s_inv = linalg::inv_spd(&s_n).ok_or(QivError::SingularResidualGram(min_eig))?;
    let cross = zw.transpose() * &res.y_hat / n;
    let theta = &s_inv * cross;
    let xi = &res.y_hat - &res.z_hat * &theta;
    let sigma_v_sq = xi.norm_squared() / n;
    let scale = match weights {
        Some(w) => xi.iter().zip(w.iter()).map(|(e, wi)| wi * e * e).sum::<f64>() / n,
        None => sigma_v_sq,
    };
    let asym_cov = linalg::symmetrize(&(s_inv * (scale / n)));
    let g_resid = y - z * &theta;
    let g_train = &res.smoother * &g_resid;
    let theorem_cov = q12.and_then(|q12| {
        if q12.ncols() != theta.len() {
            return None;
        }
        let qq = q12.transpose() * q12;
        linalg::inv_spd(&qq).map(|inv| linalg::to_rows(&(inv * (sigma_v_sq / n))))
    });
    Ok(PlmFit {
        theta_hat: theta.iter().copied().collect(),
        h,
        v_train: v.clone(),
        g_residual_table: g_resid.iter().copied().collect(),
        sigma_v_sq,
        asym_cov,
        theorem_cov,
        g_bar: g_train.mean(),
        g_train: g_train.iter().copied().collect(),
        weighted: weights.is_some(),
    })
}

/// Residualizes `Y` and `Z` on `V` and solves the normal equations for `θ`.
pub fn fit_plm(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    v: &DMatrix<f64>,
    h: f64,
    q12: Option<&DMatrix<f64>>,
) -> Result<PlmFit> {
    check_inputs(z, y, v, h)?;
    let res = residualize(z, y, v, h);
    finish(z, y, v, h, q12, &res, None)
}

/// Heteroscedastic variant with known variances; observations are weighted
/// by `1/σ_i²` in the normal equations.
pub fn fit_plm_weighted(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    v: &DMatrix<f64>,
    h: f64,
    q12: Option<&DMatrix<f64>>,
    variances: &DVector<f64>,
) -> Result<PlmFit> {
    check_inputs(z, y, v, h)?;
    if variances.len() != z.nrows() {
        return Err(QivError::LengthMismatch { expected: z.nrows(), got: variances.len() });
    }
    if variances.iter().any(|s| !(*s > 0.0)) {
        return Err(QivError::InvalidInput("variances must be positive".into()));
    }
    let w = variances.map(|s| 1.0 / s);
    let res = residualize(z, y, v, h);
    finish(z, y, v, h, q12, &res, Some(&w))
}

/// Bandwidth search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcvResult {
    pub h: f64,
    pub grid: Vec<f64>,
    /// `None` where the smoother was degenerate or the fit failed.
    pub scores: Vec<Option<f64>>,
}

/// `GCV(h) = n·RSS(h) / (n − df(h))²`, minimized over `grid`; ties go to
/// the smaller bandwidth.
///
/// `df(h)` is the trace of the whole fit's hat matrix `S + P_Ẑ(I − S)`,
/// i.e. `tr S + q − tr(P_Ẑ S)`, so the linear part's degrees of freedom are
/// charged as well as the smoother's.
pub fn gcv_bandwidth(z: &DMatrix<f64>, y: &DVector<f64>, v: &DMatrix<f64>, grid: &[f64]) -> Result<GcvResult> {
    if grid.is_empty() {
        return Err(QivError::InvalidInput("bandwidth grid is empty".into()));
    }
    let n = z.nrows() as f64;
    let scores: Vec<Option<f64>> = grid
        .iter()
        .map(|&h| {
            check_inputs(z, y, v, h).ok()?;
            let res = residualize(z, y, v, h);
            let trace = res.smoother.trace();
            if !(n - trace > 1e-8 * n) {
                return None;
            }
            let fit = finish(z, y, v, h, None, &res, None).ok()?;
            let gram = res.z_hat.transpose() * &res.z_hat;
            let smoothed = res.z_hat.transpose() * (&res.smoother * &res.z_hat);
            let coupling = linalg::solve_spd(&gram, &smoothed)?.trace();
            let df = trace + z.ncols() as f64 - coupling;
            if !(n - df > 1e-8 * n) {
                return None;
            }
            let rss = fit.sigma_v_sq * n;
            Some(n * rss / (n - df).powi(2))
        })
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for (&h, s) in grid.iter().zip(&scores) {
        if let Some(s) = *s {
            best = match best {
                Some((bh, bs)) if bs < s || (bs == s && bh <= h) => Some((bh, bs)),
                _ => Some((h, s)),
            };
        }
    }
    let (h, _) = best.ok_or(QivError::AllBandwidthsDegenerate)?;
    Ok(GcvResult { h, grid: grid.to_vec(), scores })
}

/// 20 geometric points on `[0.2, 3] · s_V · n^{-1/(4+r)}`, with `s_V` the
/// mean coordinate standard deviation of `V`.
pub fn default_grid(v: &DMatrix<f64>) -> Vec<f64> {
    let (n, r) = v.shape();
    let nf = n as f64;
    let s_v = v
        .column_iter()
        .map(|c| {
            let m = c.mean();
            (c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / nf).sqrt()
        })
        .sum::<f64>()
        / r.max(1) as f64;
    let center = s_v.max(1e-8) * nf.powf(-1.0 / (4.0 + r as f64));
    let (lo, hi) = (0.2 * center, 3.0 * center);
    let steps = 19.0;
    (0..20).map(|k| lo * (hi / lo).powf(k as f64 / steps)).collect()
}

/// Symmetric normal-theory intervals `θ̂_j ± z·√cov_jj`.
pub fn confidence_intervals(fit: &PlmFit, level: f64) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(QivError::InvalidInput(format!("level must lie in (0, 1), got {level}")));
    }
    let z = Normal::standard().inverse_cdf((1.0 + level) / 2.0);
    Ok(fit
        .theta_hat
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let half = z * fit.asym_cov[(j, j)].max(0.0).sqrt();
            (t - half, t + half)
        })
        .collect())
}
