//! Triple-symmetry graph networks for node-label inpainting.
//!
//! Models in this crate are equivariant to node and label permutations and
//! invariant to feature permutations, so one set of `K×K` weights applies to
//! graphs with any number of nodes, features and classes.

pub mod cli;
pub mod eqlayers;
pub mod graphdata;
pub mod ndarr;
pub mod rng;
pub mod symmetry;
pub mod trainer;
pub mod tsgnn;
