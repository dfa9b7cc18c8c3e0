//! Deterministic federated-optimization simulator.
//!
//! Simulates synchronous federated rounds in which clients perform unequal
//! numbers of local SGD steps, a regime in which plain weighted averaging
//! converges to a biased fixed point under non-i.i.d. data. The calibrated
//! method corrects every local step toward an estimated global direction and
//! removes that bias; FedAvg, FedNova, FedProx, and SCAFFOLD are available
//! as baselines under the same engine.
//!
//! Everything is reproducible: random draws are keyed by (seed, client,
//! round), reductions have a fixed order, and runs are bit-identical across
//! worker-thread counts and across the in-process and TCP transports.

pub mod algorithms;
pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod heterogeneity;
pub mod numeric;
pub mod objectives;
pub mod oracle;
pub mod transport;

pub use algorithms::{AlgorithmKind, CalibrationSchedule, OrientationPolicy};
pub use engine::{run, MetricsRecord, RunConfig, RunOutput};
pub use error::{FedsimError, Result};
pub use numeric::{ParamVector, RngStream};
pub use objectives::ObjectiveSpec;
