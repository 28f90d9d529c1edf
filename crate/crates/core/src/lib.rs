//! Periodic copolymer and pinning models with adsorption.
//!
//! The lattice path is a lazy simple random walk; the environment is made of
//! four periodic charge sequences. The crate computes exact finite-volume
//! partition functions, the free energy through a Perron-Frobenius
//! eigenvalue, sharp asymptotics, infinite-volume limit kernels, the
//! two-phase decomposition in the delocalized regime, and exact samplers.

pub mod error;
pub mod charges;
pub mod limits;
pub mod partition;
pub mod phasediag;
pub mod sampler;
pub mod spectral;
pub mod verify;
pub mod tail;
pub mod walk;

pub use error::{Error, Result};

/// Row-major copy of a matrix, for reports.
pub fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}
