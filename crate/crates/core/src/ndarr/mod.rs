//! Dense array engine: row-major arrays, a reverse-mode tape, Adam, ridge
//! least squares and a finite-difference gradient checker.
//!
//! Everything learnable in the crate is expressed as [`Tape`] operations over
//! [`DenseArray`] values. Values are 64-bit; [`Precision::F32`] rounds every
//! tape output to single precision for speed-comparison runs.

mod adam;
mod array;
mod gradcheck;
mod linalg;
mod sparse;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use array::DenseArray;
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use linalg::{cholesky_solve, ridge_solve, RidgeSolution};
pub use sparse::CsrMatrix;
pub use tape::{ElementwiseKind, Gradients, Precision, ReduceKind, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NdError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("non-finite value produced by {op} at tape node {node}")]
    NonFinite { op: &'static str, node: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("softmax row {0} is fully masked")]
    FullyMaskedRow(usize),
    #[error("system is singular even after ridge escalation to lambda={lambda:e}")]
    Singular { lambda: f64 },
    #[error("builder is not deterministic: two evaluations gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("{0}")]
    InvalidArgument(String),
}

impl NdError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        NdError::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
