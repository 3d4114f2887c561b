//! Simulation and verification of collapse theories with flash ontology.
//!
//! Non-relativistic flash processes are defined by a Hamiltonian and a family
//! of collapse operators on a finite-dimensional Hilbert space; the
//! relativistic process lives in 1+1 Minkowski space with Dirac evolution.

// `!(x > 0.0)` also rejects NaN; index loops mirror the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod gauge;
pub mod grwf;
pub mod opcore;
pub mod povm;
pub mod quad;
pub mod reconstruct;
pub mod rgrwf;
pub mod stats;

pub use error::{Error, Result};
