//! Optimal liquidation with a hidden market regime.
//!
//! The bid price is a pure-jump process whose tick intensities depend on an
//! unobserved Markov chain and on the trader's own selling rate. This crate
//! filters the regime from observed ticks, solves the dynamic-programming
//! equation for the value function and optimal selling rate with an explicit
//! monotone finite-difference scheme, simulates the controlled process to
//! evaluate policies by Monte Carlo, and calibrates the model from event
//! data with EM.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
pub mod calibrate;
pub mod config;
pub mod error;
pub mod events;
pub mod filter;
pub mod hjb;
pub mod model;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
pub use events::{Event, EventLog, MarkEncoding};
pub use filter::{FilterState, UnnormalizedState};
pub use model::ModelSpec;
