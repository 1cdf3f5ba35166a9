//! Data containers, standardization and the kept/removed column partition.
//!
//! Column indices are zero-based throughout the library. File formats use the
//! one-based `x1..xp` naming.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{QivError, Result};

/// Design matrix plus response, with the affine map that standardized it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    column_means: DVector<f64>,
    column_scales: DVector<f64>,
    y_mean: f64,
    standardized: bool,
}

impl Dataset {
    /// Wraps raw data. Requires `n ≥ 2`, `p ≥ 1` and finite entries.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 || p < 1 {
            return Err(QivError::InvalidInput(format!(
                "dataset needs n >= 2 and p >= 1, got n = {n}, p = {p}"
            )));
        }
        if y.len() != n {
            return Err(QivError::LengthMismatch { expected: n, got: y.len() });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(QivError::InvalidInput("non-finite entry in dataset".into()));
        }
        Ok(Self {
            x,
            y,
            column_means: DVector::zeros(p),
            column_scales: DVector::from_element(p, 1.0),
            y_mean: 0.0,
            standardized: false,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_means(&self) -> &DVector<f64> {
        &self.column_means
    }

    pub fn column_scales(&self) -> &DVector<f64> {
        &self.column_scales
    }

    /// Mean removed from the response during standardization.
    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Response on its original scale.
    pub fn raw_y(&self) -> DVector<f64> {
        self.y.add_scalar(self.y_mean)
    }

    /// Applies the recorded column map to raw observations.
    pub fn transform(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_raw.ncols() != self.p() {
            return Err(QivError::LengthMismatch { expected: self.p(), got: x_raw.ncols() });
        }
        Ok(DMatrix::from_fn(x_raw.nrows(), x_raw.ncols(), |i, j| {
            (x_raw[(i, j)] - self.column_means[j]) / self.column_scales[j]
        }))
    }

    /// Maps standardized-scale coefficients back to the raw column scale.
    pub fn unscale_coefficients(&self, beta: &[f64], columns: &[usize]) -> Vec<f64> {
        beta.iter()
            .zip(columns)
            .map(|(b, &j)| b / self.column_scales[j])
            .collect()
    }
}

/// Standardizes every column to mean 0 and divide-by-n variance 1, and
/// centers the response.
///
/// The recorded means and scales always describe the map from the original
/// raw data, so standardizing twice is a no-op.
pub fn standardize(dataset: &Dataset) -> Result<Dataset> {
    let (n, p) = dataset.x.shape();
    let nf = n as f64;
    let mut x = dataset.x.clone();
    let mut means = DVector::zeros(p);
    let mut scales = DVector::zeros(p);
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let mean = col.sum() / nf;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(QivError::ZeroVarianceColumn(j));
        }
        col.apply(|v| *v = (*v - mean) / sd);
        means[j] = mean;
        scales[j] = sd;
    }
    let y_shift = dataset.y.sum() / nf;
    let y = dataset.y.add_scalar(-y_shift);
    let column_means = DVector::from_fn(p, |j, _| {
        dataset.column_means[j] + dataset.column_scales[j] * means[j]
    });
    let column_scales = dataset.column_scales.component_mul(&scales);
    Ok(Dataset {
        x,
        y,
        column_means,
        column_scales,
        y_mean: dataset.y_mean + y_shift,
        standardized: true,
    })
}

/// Strictly increasing set of zero-based column indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    /// Sorts and deduplicates.
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    /// Builds the set and checks every index is below `p`.
    pub fn with_bound(indices: Vec<usize>, p: usize) -> Result<Self> {
        let set = Self::new(indices);
        if let Some(&bad) = set.0.iter().find(|&&i| i >= p) {
            return Err(QivError::IndexOutOfBounds { index: bad, len: p });
        }
        Ok(set)
    }

    pub fn full(p: usize) -> Self {
        Self((0..p).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    /// Indices of `0..p` not in the set.
    pub fn complement(&self, p: usize) -> Self {
        Self((0..p).filter(|i| !self.contains(*i)).collect())
    }

    /// Maps positions in a sub-collection back through this set.
    pub fn compose(&self, positions: &IndexSet) -> Self {
        Self(positions.0.iter().map(|&k| self.0[k]).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

impl TryFrom<Vec<usize>> for IndexSet {
    type Error = String;

    fn try_from(v: Vec<usize>) -> std::result::Result<Self, Self::Error> {
        if v.windows(2).any(|w| w[0] >= w[1]) {
            return Err("index set must be strictly increasing".into());
        }
        Ok(Self(v))
    }
}

impl From<IndexSet> for Vec<usize> {
    fn from(s: IndexSet) -> Self {
        s.0
    }
}

/// Full-model coefficient vector β.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector(pub Vec<f64>);

impl CoefficientVector {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(QivError::InvalidInput("non-finite coefficient".into()));
        }
        Ok(Self(beta))
    }

    pub fn zeros(p: usize) -> Self {
        Self(vec![0.0; p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Entries at the given indices.
    pub fn gather(&self, idx: &IndexSet) -> Vec<f64> {
        idx.iter().map(|j| self.0[j]).collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|b| b.abs()).sum()
    }
}

/// Kept predictors `Z` and removed predictors `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub z: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub z_indices: IndexSet,
    pub u_indices: IndexSet,
}

impl Partition {
    pub fn q(&self) -> usize {
        self.z_indices.len()
    }

    /// Puts the columns back in their original order.
    pub fn reassemble(&self) -> DMatrix<f64> {
        let n = self.z.nrows();
        let p = self.z_indices.len() + self.u_indices.len();
        let mut x = DMatrix::zeros(n, p);
        for (k, j) in self.z_indices.iter().enumerate() {
            x.set_column(j, &self.z.column(k));
        }
        for (k, j) in self.u_indices.iter().enumerate() {
            x.set_column(j, &self.u.column(k));
        }
        x
    }
}

/// Splits columns into the selected set and its complement.
pub fn partition(x: &DMatrix<f64>, selected: &IndexSet) -> Result<Partition> {
    let p = x.ncols();
    if selected.is_empty() {
        return Err(QivError::EmptySelection);
    }
    if let Some(bad) = selected.iter().find(|&j| j >= p) {
        return Err(QivError::IndexOutOfBounds { index: bad, len: p });
    }
    if selected.len() == p {
        return Err(QivError::FullSelection);
    }
    let u_indices = selected.complement(p);
    Ok(Partition {
        z: crate::linalg::select_columns(x, selected.as_slice()),
        u: crate::linalg::select_columns(x, u_indices.as_slice()),
        z_indices: selected.clone(),
        u_indices,
    })
}

/// Reads the `y,x1,...,xp` CSV layout.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| QivError::InvalidInput(format!("csv header: {e}")))?
        .clone();
    if headers.get(0) != Some("y") {
        return Err(QivError::InvalidInput("first csv column must be named \"y\"".into()));
    }
    for (k, h) in headers.iter().enumerate().skip(1) {
        if h != format!("x{k}") {
            return Err(QivError::InvalidInput(format!(
                "csv column {} must be named \"x{k}\", found \"{h}\"",
                k + 1
            )));
        }
    }
    let p = headers.len() - 1;
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| QivError::InvalidInput(format!("csv row {}: {e}", line + 2)))?;
        if rec.len() != p + 1 {
            return Err(QivError::InvalidInput(format!("csv row {} has {} fields", line + 2, rec.len())));
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                QivError::InvalidInput(format!("csv row {}: cannot parse \"{field}\"", line + 2))
            })?;
            if k == 0 {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    Dataset::new(DMatrix::from_row_slice(n, p, &xs), DVector::from_vec(ys))
}

/// Writes raw `x`/`y` in the `y,x1,...,xp` layout.
pub fn write_csv<W: Write>(writer: W, x: &DMatrix<f64>, y: &DVector<f64>) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string()];
    header.extend((1..=x.ncols()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for i in 0..x.nrows() {
        let mut row = vec![format_float(y[i])];
        row.extend(x.row(i).iter().map(|v| format_float(*v)));
        w.write_record(&row)?;
    }
    w.flush()
}

/// Shortest round-tripping decimal representation.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}
