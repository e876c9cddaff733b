//! Simulation of exemplar dynamics for phonological categories: a
//! stochastic exemplar engine, a deterministic field engine, analysis of
//! their trajectories and a scenario-driven harness.

pub mod analysis;
pub mod categorization;
pub mod error;
pub mod exemplar;
pub mod field;
pub mod model;
pub mod output;
pub mod run;
pub mod sampling;
pub mod scenario;
pub mod store;

pub use error::{Error, Result, RunFailure};
pub use model::{CategoryInit, ModelParams, PhonPoint};
