//! In-memory multivariate time series.

use serde::{Deserialize, Serialize};

use crate::error::{CicadaError, Result};
use crate::numerics::Matrix;

/// A `T×d` series with variable names and optional per-time binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub names: Vec<String>,
    pub values: Matrix,
    pub labels: Option<Vec<u8>>,
}

impl TimeSeries {
    pub fn new(names: Vec<String>, values: Matrix, labels: Option<Vec<u8>>) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(CicadaError::LengthMismatch {
                left: names.len(),
                right: values.cols(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != values.rows() {
                return Err(CicadaError::LengthMismatch {
                    left: l.len(),
                    right: values.rows(),
                });
            }
            if l.iter().any(|&y| y > 1) {
                return Err(CicadaError::BadConfig("labels must be 0 or 1".into()));
            }
        }
        if !values.is_finite() {
            return Err(CicadaError::BadConfig("series contains non-finite values".into()));
        }
        Ok(Self {
            names,
            values,
            labels,
        })
    }

    /// Unnamed series; variables are called `x0, x1, …`.
    pub fn from_values(values: Matrix) -> Self {
        let names = (0..values.cols()).map(|j| format!("x{j}")).collect();
        Self {
            names,
            values,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    /// Rows `start..end` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> TimeSeries {
        let idx: Vec<usize> = (start..end).collect();
        TimeSeries {
            names: self.names.clone(),
            values: self.values.select_rows(&idx),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
        }
    }
}
