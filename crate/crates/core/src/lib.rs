//! Accelerated fixed-point iteration for co-coercive root finding with
//! delayed and inexact operator oracles.
//!
//! The crate is organised bottom-up:
//!
//! * [`operator`] evaluable operators, finite-sum structure and call counters
//! * [`engine`] the accelerated iteration, its schedules and the KM baseline
//! * [`oracle`] delayed, mini-batch and aggregated estimators plus error monitors
//! * [`harness`] logical-time simulation of server/worker delays
//! * [`problems`] benchmark generators (matrix game, finite-sum quadratic)
//! * [`diagnostics`] traces, rate fits and bound checks

pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod harness;
pub mod operator;
pub mod oracle;
pub mod problems;
pub mod rng;

pub use error::{AfpError, Result};

/// Dense column vector used throughout.
pub type Vector = nalgebra::DVector<f64>;
