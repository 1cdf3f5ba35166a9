//! Quasi-instrumental-variable bias correction after variable selection.
//!
//! The pipeline is: standardize, select with the Dantzig selector, build an
//! instrument from the discarded columns, fit a partially linear model and
//! predict.

// `!(x > t)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod instrument;
pub mod linalg;
pub mod lp;
pub mod matrix_json;
pub mod pipeline;
pub mod plm;
pub mod predictor;
pub mod selector;
pub mod simulator;

pub use data::{CoefficientVector, Dataset, IndexSet, Partition};
pub use error::{QivError, Result};
