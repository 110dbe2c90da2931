//! Dense matrices, closed-form linear algebra and a reverse-mode gradient
//! engine.

pub mod check;
mod graph;
mod linalg;
mod matrix;

pub use graph::{Gradients, Graph, Var};
pub use linalg::{
    normalize_columns, percentile, pseudo_inverse, qr_orthonormalize, softmax_axis, spd_inverse,
    spd_solve, stiefel_tangent, unit_column_tangent, Axis, COND_LIMIT, RANK_TOL,
};
pub(crate) use linalg::percentile_sorted;
pub use matrix::Matrix;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("rank deficient: column {column} has residual norm {norm:e}")]
    RankDeficient { column: usize, norm: f64 },
    #[error("matrix is numerically singular (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("gradient root must be 1x1, got {shape:?}")]
    NonScalarRoot { shape: (usize, usize) },
    #[error("{0}")]
    InvalidArgument(String),
}
