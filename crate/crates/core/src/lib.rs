//! Collapse-model dynamics on finite spatial lattices.
//!
//! The crate covers the Markovian continuous-spontaneous-localization model
//! (linear and normalized stochastic Schrödinger equations, Girsanov
//! reweighting) and non-Markovian unravelings of a Gaussian influence
//! functional generated by a Pauli–Villars regularized scalar field, together
//! with the deterministic oracles used to check them.
//!
//! Units are ħ = c = 1.

pub mod collapse_analysis;
pub mod csl;
pub mod error;
pub mod gaussian_field;
pub mod hilbert;
pub mod io;
pub mod nonmarkov;
mod parallel;
pub mod propagators;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
