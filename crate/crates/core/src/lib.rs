//! Cost-aware choice of the number of participating clients `K` and local
//! iterations `E` for synchronous federated averaging.
//!
//! * [`model`]: device profiles, populations, weights, bound constants, RNG streams
//! * [`cost`]: expected time/energy and the relaxed objective
//! * [`optimizer`]: alternate convex search, grid oracle, property checks
//! * [`estimator`]: probing runs and recovery of `ρ = A0/B0`
//! * [`sim`]: FedAvg with multinomial logistic regression on synthetic data
//! * [`harness`]: experiment configs and the estimate/optimize/simulate/sweep/tradeoff pipelines

pub mod cost;
pub mod cubic;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod model;
pub mod optimizer;
pub mod sim;

pub use error::{Error, Result};
