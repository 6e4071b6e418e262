//! Deterministic simulator and solver for federated learning over an
//! energy-constrained UAV swarm.
//!
//! The library splits into:
//!
//! - [`power`]: rotary-wing propulsion power model and battery accounting;
//! - [`data`]: IDX dataset ingestion, class-imbalanced partitioning, and
//!   per-UAV class censuses;
//! - [`fl`]: from-scratch MLP training with federated averaging;
//! - [`select`]: coverage- and battery-constrained UAV selection, an
//!   independent brute-force oracle, and baseline policies;
//! - [`sim`]: the round loop tying selection, training, battery drain,
//!   and metric collection together;
//! - [`config`] / [`cli`]: experiment configuration and the command-line
//!   front end.
//!
//! Every run is a pure function of its configuration and seed: repeated
//! invocations produce byte-identical traces.

// Negated comparisons like `!(x >= 0.0)` are deliberate: they reject NaN
// along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fl;
pub mod power;
pub mod select;
pub mod sim;

pub use error::{Error, Result};
