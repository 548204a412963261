//! Quantum and classical dynamics under a stochastic microscopic clock.
//!
//! The macroscopic time t of an experiment is modeled as the average of a
//! random microscopic time θ. Averaging the exact evolution over θ turns pure
//! states into mixtures, spreads classical densities and stretches decay
//! laws; this crate computes those effects three ways (closed form, master
//! equation, Monte Carlo) and cross-checks them.

pub mod classical;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod oracle;
pub mod quadrature;
pub mod quantum;
pub mod scenario;
pub mod time_model;
pub mod units;
pub mod wavepacket;

pub use error::{Error, Result};
