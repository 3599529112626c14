//! Graph data model, the on-disk dataset directory format, feature
//! preprocessing and a stochastic block model generator.

mod graph;
mod io;
mod preprocess;
mod sbm;

pub use graph::{Graph, Splits};
pub use io::{load_dataset, save_dataset, DatasetMeta};
pub use preprocess::{l2_normalize_rows, pca_reduce, rw_normalize, Pca, PreprocessConfig};
pub use sbm::{gen_sbm, SbmParams};

use std::path::PathBuf;

use thiserror::Error;

use crate::ndarr::NdError;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Malformed {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("{file}: expected {expected} rows, found {found}")]
    RowCount {
        file: String,
        expected: usize,
        found: usize,
    },
    #[error("node {node} has label {label} but there are only {num_classes} classes")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("power iteration did not converge for component {component}")]
    NonConvergence { component: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Nd(#[from] NdError),
}
