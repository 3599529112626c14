//! Actions of `S_N × S_F × S_C` on graphs and node matrices, the exclusion
//! set, invariant polynomial families and a brute-force solver for spaces of
//! equivariant linear maps.

mod basis;
mod perm;
mod poly;

pub use basis::{equivariant_basis, numeric_rank, EquivariantBasis, SymmetryGroup, MAX_UNKNOWNS};
pub use perm::{apply_to_graph, apply_triple, permute_axis, sample_perm_triple, Perm, PermTriple};
pub use poly::{dmp, in_exclusion_set, multi_indices, pmp};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymmetryError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid permutation: {0}")]
    InvalidPerm(String),
    #[error("invalid group: {0}")]
    InvalidGroup(String),
    #[error("{unknowns} unknowns exceed the limit of {limit}")]
    GuardExceeded { unknowns: usize, limit: usize },
}
