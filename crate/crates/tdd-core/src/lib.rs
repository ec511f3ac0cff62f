#![no_std]
//! Hidden-string Hamiltonian extension of linear time-dispersive and
//! dissipative systems.
//!
//! A causal susceptibility χ(t) is turned into a coupling ς̂(κ) = √(2Φ(κ))
//! to an auxiliary string; the system plus string is a conservative
//! Hamiltonian system whose open part reproduces the dissipative dynamics.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod coupling;
pub mod drive;
pub mod error;
pub mod extension;
pub mod linalg;
pub mod models;
pub mod reduced;
pub mod susceptibility;

pub use error::{Error, Result};
pub use linalg::{SkewMatrix, SymMatrix};
