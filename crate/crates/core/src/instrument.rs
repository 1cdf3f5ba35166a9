//! Construction of the quasi-instrumental variable `V = A Z̃`.
//!
//! `Z̃ = (Z, Ũ)` augments the kept predictors with `d` removed predictors
//! `U*` residualized on `Z` and whitened. The cross-Gram `ΣᵀΣ / (p − q)`
//! with `Σ = Cov(U, Z̃)` is estimated by a U-statistic and factored; the
//! leading eigenvectors define `A` directly (Method 1) or through a rank-one
//! ridge approximation of the projector `Q₁Q₁ᵀ` (Method 2).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::IndexSet;
use crate::error::{QivError, Result};
use crate::linalg::{self, EPS_PD};

pub const DEFAULT_RANK_TOL: f64 = 0.01;

/// Orders removed predictors by `‖corr(U⁽ᵏ⁾, Z)‖₁`, largest first; ties go to
/// the smaller index.
pub fn rank_u_columns(z: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<Vec<usize>> {
    let n = z.nrows() as f64;
    let unit = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let mut c = linalg::center_columns(m);
        for (j, mut col) in c.column_iter_mut().enumerate() {
            let sd = (col.norm_squared() / n).sqrt();
            if !(sd > 1e-12) {
                return Err(QivError::ZeroVarianceColumn(j));
            }
            col /= sd;
        }
        Ok(c)
    };
    let zs = unit(z)?;
    let us = unit(u)?;
    let corr = us.transpose() * zs / n;
    let norms: Vec<f64> = corr.row_iter().map(|r| r.iter().map(|v| v.abs()).sum()).collect();
    let mut order: Vec<usize> = (0..u.ncols()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    Ok(order)
}

/// Sample moments that map `(Z, U*)` to `Ũ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenPlan {
    /// Positions of the chosen columns within `U`.
    pub ustar_indices: IndexSet,
    pub z_means: Vec<f64>,
    pub ustar_means: Vec<f64>,
    #[serde(with = "crate::matrix_json")]
    pub sigma_ustar_ustar: DMatrix<f64>,
    #[serde(with = "crate::matrix_json")]
    pub sigma_ustar_z: DMatrix<f64>,
    /// Regression of `U*` on `Z`, `Σ_{U*,Z} Σ_{Z,Z}⁻¹` (d × q).
    #[serde(with = "crate::matrix_json")]
    pub projection: DMatrix<f64>,
    /// Inverse square root of the residual covariance of `U*` given `Z`.
    #[serde(with = "crate::matrix_json")]
    pub whitener: DMatrix<f64>,
}

impl WhitenPlan {
    pub fn d(&self) -> usize {
        self.ustar_indices.len()
    }

    /// `Z̃` for observations given as `Z` and the `U*` columns, in plan order.
    pub fn apply(&self, z: &DMatrix<f64>, ustar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (n, q) = z.shape();
        let d = self.d();
        if q != self.z_means.len() || ustar.ncols() != d || ustar.nrows() != n {
            return Err(QivError::IncompatibleDimensions(format!(
                "whiten plan expects {} kept and {} instrument columns",
                self.z_means.len(),
                d
            )));
        }
        let zc = DMatrix::from_fn(n, q, |i, j| z[(i, j)] - self.z_means[j]);
        let uc = DMatrix::from_fn(n, d, |i, j| ustar[(i, j)] - self.ustar_means[j]);
        let resid = uc - &zc * self.projection.transpose();
        let utilde = resid * &self.whitener;
        let mut out = DMatrix::zeros(n, q + d);
        out.columns_mut(0, q).copy_from(z);
        out.columns_mut(q, d).copy_from(&utilde);
        Ok(out)
    }
}

/// Builds `Z̃ = (Z, Ũ)` with `Ũ = S^{-1/2}(U* − Σ_{U*,Z}Σ_{Z,Z}⁻¹Z)` and
/// `S` the residual covariance of `U*` given `Z`.
pub fn whiten(z: &DMatrix<f64>, u: &DMatrix<f64>, ustar_indices: &IndexSet) -> Result<(DMatrix<f64>, WhitenPlan)> {
    if z.nrows() != u.nrows() {
        return Err(QivError::LengthMismatch { expected: z.nrows(), got: u.nrows() });
    }
    if ustar_indices.is_empty() {
        return Err(QivError::InvalidInput("at least one removed predictor is required".into()));
    }
    if let Some(bad) = ustar_indices.iter().find(|&k| k >= u.ncols()) {
        return Err(QivError::IndexOutOfBounds { index: bad, len: u.ncols() });
    }
    let ustar = linalg::select_columns(u, ustar_indices.as_slice());
    let s_uu = linalg::cross_cov(&ustar, &ustar);
    let s_uz = linalg::cross_cov(&ustar, z);
    let s_zz = linalg::cross_cov(z, z);
    let s_zz_inv = linalg::inv_spd(&s_zz).ok_or(QivError::SingularDesign)?;
    let projection = &s_uz * s_zz_inv;
    let schur = linalg::symmetrize(&(&s_uu - &projection * s_uz.transpose()));
    let min_eig = linalg::min_eigenvalue(&schur);
    if !(min_eig > EPS_PD) {
        return Err(QivError::DegenerateSchurComplement(min_eig));
    }
    let whitener = linalg::inv_sqrt_spd(&schur, EPS_PD);
    let plan = WhitenPlan {
        ustar_indices: ustar_indices.clone(),
        z_means: linalg::column_means(z).iter().copied().collect(),
        ustar_means: linalg::column_means(&ustar).iter().copied().collect(),
        sigma_ustar_ustar: s_uu,
        sigma_ustar_z: s_uz,
        projection,
        whitener,
    };
    let ztilde = plan.apply(z, &ustar)?;
    Ok((ztilde, plan))
}

/// U-statistic estimate of `ΣᵀΣ / (p − q)`, `Σ = Cov(U, Z̃)`:
///
/// ```text
/// 1/(p−q) · 2/(n(n−1)) · Σ_{i<j} (K_ij + K_ijᵀ)/2,   K_ij = Z̃ᵢ (UᵢᵀUⱼ) Z̃ⱼᵀ
/// ```
///
/// evaluated in `O(n (p−q) (q+d))` through `Σ_{i≠j} K_ij = S Sᵀ − Σᵢ ‖Uᵢ‖² Z̃ᵢZ̃ᵢᵀ`
/// with `S = Z̃ᵀU`.
pub fn ustat_cross_gram(ztilde: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, m) = ztilde.shape();
    if u.nrows() != n {
        return Err(QivError::LengthMismatch { expected: n, got: u.nrows() });
    }
    if n < 2 || u.ncols() == 0 {
        return Err(QivError::InvalidInput("U-statistic needs n >= 2 and at least one removed predictor".into()));
    }
    let s = ztilde.transpose() * u;
    let mut total = &s * s.transpose();
    for i in 0..n {
        let w = u.row(i).norm_squared();
        let zi = ztilde.row(i);
        for a in 0..m {
            let za = w * zi[a];
            for b in 0..m {
                total[(a, b)] -= za * zi[b];
            }
        }
    }
    let denom = (n * (n - 1)) as f64 * u.ncols() as f64;
    Ok(linalg::symmetrize(&total) / denom)
}

/// Retained leading eigenpairs of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFactor {
    /// `(q+d) × r̂`, orthonormal columns.
    pub q1: DMatrix<f64>,
    /// Bottom `d` rows of `q1`.
    pub q12: DMatrix<f64>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub rank: usize,
}

/// Eigendecomposition of `m`, keeping eigenvalues `≥ rank_tol · λ_max`.
pub fn spectral_factor(m: &DMatrix<f64>, d: usize, rank_tol: f64) -> Result<SpectralFactor> {
    let k = m.nrows();
    if m.ncols() != k || d > k {
        return Err(QivError::IncompatibleDimensions(format!("{}x{} matrix with d = {d}", k, m.ncols())));
    }
    let (vals, vecs) = linalg::sym_eigen_desc(m);
    let lmax = vals[0];
    if !(lmax > 1e-300) {
        return Err(QivError::ZeroMatrix);
    }
    let cut = rank_tol * lmax;
    let rank = vals.iter().take_while(|&&l| l >= cut).count().max(1);
    let q1 = vecs.columns(0, rank).clone_owned();
    let q12 = q1.rows(k - d, d).clone_owned();
    Ok(SpectralFactor { q1, q12, eigenvalues: vals.iter().take(rank).copied().collect(), rank })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "m1")]
    Method1,
    #[serde(rename = "m2")]
    Method2,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Method1 => "m1",
            Method::Method2 => "m2",
        }
    }
}

/// Learned map from an observation's kept and removed predictors to `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentPlan {
    pub method: Method,
    #[serde(default)]
    pub cross_gram: CrossGram,
    pub whiten: WhitenPlan,
    /// `r × (q+d)`; `V = A Z̃`.
    #[serde(with = "crate::matrix_json")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::matrix_json")]
    pub q1: DMatrix<f64>,
    #[serde(with = "crate::matrix_json")]
    pub q12: DMatrix<f64>,
    /// Dimension of `V` (rows of `A`).
    pub rank: usize,
    /// Number of retained eigenpairs in the spectral factor.
    pub spectral_rank: usize,
    pub eigenvalues: Vec<f64>,
    pub rank_tol: f64,
    /// Eigenvalues of `Q̂₁₁ᵀQ̂₁₁`; diagnostic only.
    pub q11_eigenvalues: Vec<f64>,
}

impl InstrumentPlan {
    pub fn q(&self) -> usize {
        self.whiten.z_means.len()
    }

    /// `V` for observations given as kept columns `z` and all removed columns `u`.
    pub fn instrument(&self, z: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let ustar_pos = self.whiten.ustar_indices.as_slice();
        if ustar_pos.iter().any(|&k| k >= u.ncols()) {
            return Err(QivError::MissingUStarColumns);
        }
        let ustar = linalg::select_columns(u, ustar_pos);
        let zt = self.whiten.apply(z, &ustar)?;
        Ok(zt * self.a.transpose())
    }
}

fn q11_diagnostic(q1: &DMatrix<f64>, q: usize) -> Vec<f64> {
    let q11 = q1.rows(0, q);
    let gram = q11.transpose() * q11;
    linalg::sym_eigen_desc(&gram).0.iter().copied().collect()
}

fn top_d(z: &DMatrix<f64>, u: &DMatrix<f64>, d: usize) -> Result<IndexSet> {
    if d == 0 || d > u.ncols() {
        return Err(QivError::InvalidInput(format!("d must lie in [1, {}], got {d}", u.ncols())));
    }
    let order = rank_u_columns(z, u)?;
    Ok(IndexSet::new(order[..d].to_vec()))
}

/// Which cross-Gram estimate Method 1 factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossGram {
    /// The full U-statistic estimate.
    #[default]
    Full,
    /// Kept-predictor rows and columns set to zero, so the rank is at most
    /// `d` and `V` is a rotation of the whitened removed predictors.
    RemovedBlock,
}

/// Method 1: top-`d` correlated removed predictors, `A = Q̂₁ᵀ`.
pub fn build_instrument_m1(
    z: &DMatrix<f64>,
    u: &DMatrix<f64>,
    d: usize,
    rank_tol: f64,
) -> Result<(InstrumentPlan, DMatrix<f64>)> {
    build_instrument_m1_with(z, u, d, rank_tol, CrossGram::Full)
}

pub fn build_instrument_m1_with(
    z: &DMatrix<f64>,
    u: &DMatrix<f64>,
    d: usize,
    rank_tol: f64,
    cross_gram: CrossGram,
) -> Result<(InstrumentPlan, DMatrix<f64>)> {
    let ustar = top_d(z, u, d)?;
    let (ztilde, wplan) = whiten(z, u, &ustar)?;
    let mut m = ustat_cross_gram(&ztilde, u)?;
    if cross_gram == CrossGram::RemovedBlock {
        let q = z.ncols();
        m.rows_mut(0, q).fill(0.0);
        m.columns_mut(0, q).fill(0.0);
    }
    let sf = spectral_factor(&m, d, rank_tol)?;
    let a = sf.q1.transpose();
    let v = &ztilde * sf.q1.clone();
    let plan = InstrumentPlan {
        method: Method::Method1,
        cross_gram,
        whiten: wplan,
        q11_eigenvalues: q11_diagnostic(&sf.q1, z.ncols()),
        a,
        q1: sf.q1,
        q12: sf.q12,
        rank: sf.rank,
        spectral_rank: sf.rank,
        eigenvalues: sf.eigenvalues,
        rank_tol,
    };
    Ok((plan, v))
}

/// Outcome of the incremental search for `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DSelection {
    pub d: usize,
    /// Numerical rank `r_d` observed for each tried `d = 1, 2, ...`.
    pub ranks: Vec<usize>,
    pub warning: Option<String>,
}

/// Increments `d` until the numerical rank `r_d` of the cross-Gram estimate
/// satisfies `r_d − d ≤ 1`, or `d_max` is reached.
pub fn select_d(z: &DMatrix<f64>, u: &DMatrix<f64>, d_max: usize, rank_tol: f64) -> Result<DSelection> {
    let d_max = d_max.max(1).min(u.ncols());
    let order = rank_u_columns(z, u)?;
    let mut ranks = Vec::new();
    for d in 1..=d_max {
        let ustar = IndexSet::new(order[..d].to_vec());
        let (ztilde, _) = match whiten(z, u, &ustar) {
            Ok(w) => w,
            Err(e) if d == 1 => return Err(e),
            Err(e) => {
                return Ok(DSelection {
                    d: d - 1,
                    ranks,
                    warning: Some(format!("stopped at d = {} after whitening failed: {e}", d - 1)),
                })
            }
        };
        let m = ustat_cross_gram(&ztilde, u)?;
        let r = spectral_factor(&m, d, rank_tol)?.rank;
        ranks.push(r);
        if r <= d + 1 {
            return Ok(DSelection { d, ranks, warning: None });
        }
    }
    Ok(DSelection {
        d: d_max,
        ranks,
        warning: Some(format!("rank condition r_d - d <= 1 not met up to d_max = {d_max}")),
    })
}

/// Stacked rows `Â_k = (D_k G + c·c_k·e_k/2)(G + c_k I)⁻¹`, i.e.
/// `(D G + (c·c_k/2) I)(G + c_k I)⁻¹`.
pub fn method2_rows(projector: &DMatrix<f64>, gram: &DMatrix<f64>, c: f64, c_k: f64) -> Result<DMatrix<f64>> {
    let k = gram.nrows();
    let reg = gram + DMatrix::identity(k, k) * c_k;
    let reg_inv = linalg::inv_spd(&reg).ok_or(QivError::DegenerateGram)?;
    let lhs = projector * gram + DMatrix::identity(k, k) * (c * c_k / 2.0);
    Ok(lhs * reg_inv)
}

/// Collapses the rows `Â_k` to the unit row vector `(â_1, ..., â_{q+1})`
/// with `|â_k| = ‖Â_k‖`, `â_1 ≥ 0` and `sign(â_k) = sign(⟨Â_k, Â_1⟩)`.
pub fn method2_direction(rows: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = rows.nrows();
    let first = rows.row(0).clone_owned();
    let a = DVector::from_fn(k, |i, _| {
        let r = rows.row(i);
        let mag = r.norm();
        if i == 0 {
            mag
        } else if r.dot(&first) < 0.0 {
            -mag
        } else {
            mag
        }
    });
    let norm = a.norm();
    if !(norm > 0.0) {
        return Err(QivError::DegenerateGram);
    }
    Ok(a / norm)
}

/// Method 2: a single whitened removed predictor and a unit row vector `A`
/// approximating the projector `Q̂₁Q̂₁ᵀ` in the `Z̃` metric.
pub fn build_instrument_m2(
    z: &DMatrix<f64>,
    u: &DMatrix<f64>,
    c: f64,
    c_k: f64,
    rank_tol: f64,
) -> Result<(InstrumentPlan, DMatrix<f64>)> {
    if !(c > 0.0 && c_k > 0.0) {
        return Err(QivError::InvalidInput(format!("c and c_k must be positive, got {c} and {c_k}")));
    }
    let ustar = top_d(z, u, 1)?;
    let (ztilde, wplan) = whiten(z, u, &ustar)?;
    let m = ustat_cross_gram(&ztilde, u)?;
    let sf = spectral_factor(&m, 1, rank_tol)?;
    let n = ztilde.nrows() as f64;
    let gram = ztilde.transpose() * &ztilde / n;
    let projector = &sf.q1 * sf.q1.transpose();
    let rows = method2_rows(&projector, &gram, c, c_k)?;
    let dir = method2_direction(&rows)?;
    let a = DMatrix::from_row_slice(1, dir.len(), dir.as_slice());
    let v = &ztilde * a.transpose();
    let plan = InstrumentPlan {
        method: Method::Method2,
        cross_gram: CrossGram::Full,
        whiten: wplan,
        q11_eigenvalues: q11_diagnostic(&sf.q1, z.ncols()),
        a,
        q1: sf.q1,
        q12: sf.q12,
        rank: 1,
        spectral_rank: sf.rank,
        eigenvalues: sf.eigenvalues,
        rank_tol,
    };
    Ok((plan, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn ranking_prefers_copies_and_ignores_sign() {
        let z = gaussian(200, 1, 1);
        let noise = gaussian(200, 1, 2);
        let mut u = DMatrix::zeros(200, 2);
        u.set_column(0, &noise.column(0));
        u.set_column(1, &(-z.column(0)));
        assert_eq!(rank_u_columns(&z, &u).unwrap()[0], 1);
        u.set_column(0, &z.column(0));
        u.set_column(1, &noise.column(0));
        assert_eq!(rank_u_columns(&z, &u).unwrap(), vec![0, 1]);
    }

    #[test]
    fn whitening_removes_kept_direction() {
        let n = 5000;
        let z = gaussian(n, 2, 3);
        let e = gaussian(n, 1, 4);
        let mut u = gaussian(n, 3, 5);
        u.set_column(1, &(z.column(0) * 0.5 + e.column(0)));
        let (zt, plan) = whiten(&z, &u, &IndexSet::new(vec![1])).unwrap();
        let ut = zt.column(2).clone_owned();
        let cov = linalg::cross_cov(&DMatrix::from_column_slice(n, 1, ut.as_slice()), &z);
        assert!(cov.amax() < 0.05);
        let corr_e = linalg::cross_cov(&DMatrix::from_column_slice(n, 1, ut.as_slice()), &e)[(0, 0)];
        assert!(corr_e > 0.99, "{corr_e}");
        let schur = &plan.sigma_ustar_ustar - &plan.projection * plan.sigma_ustar_z.transpose();
        let id = &plan.whitener * schur * &plan.whitener;
        assert!((id - DMatrix::identity(1, 1)).amax() < 1e-8);
    }

    #[test]
    fn whitening_detects_collinear_instrument() {
        let z = gaussian(100, 2, 6);
        let mut u = gaussian(100, 2, 7);
        u.set_column(0, &(z.column(0) * 2.0 - z.column(1)));
        assert!(matches!(
            whiten(&z, &u, &IndexSet::new(vec![0])),
            Err(QivError::DegenerateSchurComplement(_))
        ));
    }

    #[test]
    fn stored_plan_reproduces_training_ztilde() {
        let z = gaussian(80, 3, 8);
        let u = gaussian(80, 6, 9);
        let idx = IndexSet::new(vec![2, 4]);
        let (zt, plan) = whiten(&z, &u, &idx).unwrap();
        let again = plan.apply(&z, &linalg::select_columns(&u, idx.as_slice())).unwrap();
        assert_eq!(zt, again);
    }

    #[test]
    fn ustat_two_points_is_single_pair() {
        let zt = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let u = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 3.0, 1.0, -1.0]);
        let m = ustat_cross_gram(&zt, &u).unwrap();
        let inner = u.row(0).dot(&u.row(1));
        let k = zt.row(0).transpose() * zt.row(1) * inner;
        let expect = (&k + k.transpose()) / 2.0 / 3.0;
        assert!((m - expect).amax() < 1e-14);
    }

    #[test]
    fn ustat_orthogonal_rows_vanish() {
        let zt = gaussian(3, 2, 10);
        let u = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, -1.0]);
        assert!(ustat_cross_gram(&zt, &u).unwrap().amax() < 1e-14);
    }

    #[test]
    fn spectral_identity_and_threshold() {
        let sf = spectral_factor(&DMatrix::identity(3, 3), 1, 0.01).unwrap();
        assert_eq!(sf.rank, 3);
        assert_eq!(sf.eigenvalues, vec![1.0, 1.0, 1.0]);
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 1e-9]));
        assert_eq!(spectral_factor(&m, 1, 1e-3).unwrap().rank, 2);
        assert_eq!(spectral_factor(&DMatrix::zeros(2, 2), 1, 0.01).unwrap_err(), QivError::ZeroMatrix);
    }

    #[test]
    fn spectral_reconstructs_low_rank() {
        let b = gaussian(5, 2, 11);
        let m = &b * b.transpose();
        let sf = spectral_factor(&m, 2, 1e-6).unwrap();
        assert_eq!(sf.rank, 2);
        let lam = DMatrix::from_diagonal(&DVector::from_vec(sf.eigenvalues.clone()));
        let rec = &sf.q1 * lam * sf.q1.transpose();
        assert!((rec - &m).amax() < 1e-10);
        assert!((sf.q1.transpose() * &sf.q1 - DMatrix::identity(2, 2)).amax() < 1e-10);
        assert_eq!(sf.q12, sf.q1.rows(3, 2).clone_owned());
    }

    #[test]
    fn method1_rows_orthonormal() {
        let z = gaussian(60, 3, 12);
        let mut u = gaussian(60, 10, 13);
        u.set_column(4, &(u.column(4) + z.column(1)));
        let (plan, v) = build_instrument_m1(&z, &u, 2, 0.01).unwrap();
        let aat = &plan.a * plan.a.transpose();
        assert!((aat - DMatrix::identity(plan.rank, plan.rank)).amax() < 1e-10);
        assert_eq!(v.ncols(), plan.rank);
        assert!(plan.whiten.ustar_indices.contains(4));
        let v2 = plan.instrument(&z, &u).unwrap();
        assert!((v2 - v).amax() < 1e-12);
    }

    #[test]
    fn d_selection_boundaries() {
        let z = gaussian(300, 2, 14);
        let u = gaussian(300, 8, 15);
        assert_eq!(select_d(&z, &u, 1, 0.01).unwrap().d, 1);
    }

    #[test]
    fn method2_planted_projector() {
        let a = DVector::from_vec(vec![0.6, -0.48, 0.64]);
        let proj = &a * a.transpose();
        let gram = DMatrix::identity(3, 3);
        let c_k = 0.01;
        let rows = method2_rows(&proj, &gram, 2.0, c_k).unwrap();
        let got = method2_direction(&rows).unwrap();
        let err = (&got - &a).amax().min((&got + &a).amax());
        assert!(err < 5.0 * c_k, "{err}");
    }

    #[test]
    fn method2_ridge_limit_is_uniform() {
        let a = DVector::from_vec(vec![0.6, -0.48, 0.64]);
        let proj = &a * a.transpose();
        let gram = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 1.0]);
        let rows = method2_rows(&proj, &gram, 2.0, 1e8).unwrap();
        let got = method2_direction(&rows).unwrap();
        for v in got.iter() {
            assert!((v.abs() - 1.0 / 3f64.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn method2_plan_is_unit_row() {
        let z = gaussian(80, 2, 16);
        let mut u = gaussian(80, 12, 17);
        u.set_column(3, &(u.column(3) * 0.5 + z.column(0)));
        let (plan, v) = build_instrument_m2(&z, &u, 2.0, 0.2, 0.01).unwrap();
        assert_eq!(plan.rank, 1);
        assert_eq!(plan.a.shape(), (1, 3));
        assert!((plan.a.norm() - 1.0).abs() < 1e-12);
        assert!(plan.a[(0, 0)] >= 0.0);
        assert_eq!(v.ncols(), 1);
    }

    #[test]
    fn plan_json_round_trip() {
        let z = gaussian(40, 2, 18);
        let u = gaussian(40, 5, 19);
        let (plan, _) = build_instrument_m1(&z, &u, 1, 0.01).unwrap();
        let text = serde_json::to_string(&plan).unwrap();
        assert!(text.contains("\"rows\""));
        let back: InstrumentPlan = serde_json::from_str(&text).unwrap();
        assert_eq!(back, plan);
    }
}
