//! Row-major JSON layout for dense matrices: `{"rows": r, "cols": c, "data": [[...], ...]}`.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
struct RowMajor {
    rows: usize,
    cols: usize,
    data: Vec<Vec<f64>>,
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    RowMajor { rows: m.nrows(), cols: m.ncols(), data: crate::linalg::to_rows(m) }.serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let rm = RowMajor::deserialize(d)?;
    if rm.data.len() != rm.rows {
        return Err(D::Error::custom(format!("expected {} rows, found {}", rm.rows, rm.data.len())));
    }
    crate::linalg::from_rows(&rm.data, rm.cols)
        .ok_or_else(|| D::Error::custom(format!("every row must have {} columns", rm.cols)))
}
