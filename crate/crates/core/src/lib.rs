//! Rate-adaptive incremental-redundancy HARQ over Rayleigh block fading with an
//! unreliable one-bit feedback link.
//!
//! The crate is `no_std` (it needs `alloc`) and covers the whole numerical
//! pipeline:
//!
//! - [`numerics`]: erfc, Q, E1, Rayleigh expectations and grid convolution.
//! - [`mi_model`]: accumulated mutual-information statistics and the
//!   decoding-failure probabilities `P_{k,f}` (Gaussian and convolution).
//! - [`feedback_model`]: PUCCH format 0 sequence geometry, asymmetric
//!   ACK/NACK detection and its error rates.
//! - [`harq_analysis`]: closed-form evaluation of a HARQ policy (occurrence
//!   probabilities, outage, symbol cost, throughput) and the duplicated-ACK
//!   baseline.
//! - [`optimizer`]: Lagrangian dynamic programming over rate allocations,
//!   bisection on the multiplier, threshold optimization and the alternating
//!   outer loop.
//! - [`mc_simulator`]: episode-level Monte Carlo of the full protocol.
//!
//! Signal-to-noise ratios are linear inside the crate unless a field or
//! argument name ends in `_db`.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;
pub mod feedback_model;
pub mod harq_analysis;
pub mod mc_simulator;
pub mod mi_model;
pub mod numerics;
pub mod optimizer;

pub use error::{Error, Result};

/// Converts decibels to a linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    libm::pow(10.0, db / 10.0)
}
