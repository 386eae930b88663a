//! Simulator and verification harness for a semi-asynchronous
//! iterative-parameter-mixing perceptron whose server enforces a fixed
//! staleness profile by bucket aggregation with padding.
//!
//! Modules, bottom-up:
//!
//! * [`dataset`]: margin-separable data, certificates, global correctness.
//! * [`perceptron`]: local training and its pathwise progress/norm checks.
//! * [`scheduler`]: arrival sets with downlink/turnaround staleness.
//! * [`channel`]: zero-mean additive link noise.
//! * [`aggregator`]: staleness profiles, buckets, weights, the server step.
//! * [`engine`]: full runs, traces, potentials, bounds and Monte Carlo.
//! * [`experiment`]: parameter sweeps and profile design.

pub mod aggregator;
pub mod channel;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod perceptron;
pub mod rng;
pub mod scheduler;
pub mod vector;

pub use error::{Result, SimError};
