//! Controlled interacting particle filters for continuous-time linear-Gaussian filtering.
//!
//! - [`matrix_eq`]: Lyapunov, `√Ricc`, skew-symmetric correction, pseudo-inverse and
//!   singular-covariance gain solvers.
//! - [`model`]: the linear-Gaussian model and path simulation.
//! - [`kalman`]: Kalman–Bucy reference filter and steady state.
//! - [`particle_filters`]: stochastic FPF, optimal-transport FPF (regular and singular),
//!   perturbed-observation EnKF and the coupled mean-field ensemble.
//! - [`experiments`]: error decay, propagation of chaos and importance-sampling comparison.
//! - [`config`] and [`output`]: configuration parsing and CSV/manifest emission for the CLI.

pub mod config;
pub mod error;
pub mod experiments;
pub mod kalman;
pub mod matrix_eq;
pub mod model;
pub mod output;
pub mod particle_filters;
pub mod rng;
pub mod validate;

pub use error::{Error, Result};
