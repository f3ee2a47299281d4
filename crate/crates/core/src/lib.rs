//! Commute-time node embeddings for undirected graphs.
//!
//! The pipeline compresses dyadic powers of the random-walk operator into a
//! chain of small orthonormal bases ([`multiscale`]), assembles a Green
//! function from that chain with a dyadic product ([`green`]), factors the
//! commute-time kernel into node coordinates, and optionally refines the
//! per-coordinate scaling with negative-sampling SGD ([`sgd`]). The
//! [`eval`] module provides the classification harness and a Monte Carlo
//! commute-time oracle.

pub mod error;
pub mod eval;
pub mod graph;
pub mod green;
pub mod io;
pub mod linalg;
pub mod multiscale;
pub mod pipeline;
pub mod sgd;

pub use error::{Error, Result};
