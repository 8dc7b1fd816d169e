//! Numerical core for Lyapunov-exponent based stability analysis of power
//! networks: network model, power flow, 4th-order machine DAE, trapezoidal
//! integration with tangent maps, discrete-QR spectra and greedy log-det
//! allocation of renewable injections.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is on.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod allocate;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod lyapunov;
pub mod metrics;
pub mod network;
pub mod powerflow;
pub mod scalar;

pub use error::{Error, Result};

/// Synchronous speed in rad/s.
pub const OMEGA0: f64 = 120.0 * core::f64::consts::PI;
