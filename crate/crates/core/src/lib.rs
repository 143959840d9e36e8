//! Federated student-success prediction.
//!
//! The crate ingests (student, skill, correct) interaction logs, engineers one
//! training row per student/skill pair, and compares two ways of learning a
//! success predictor from them:
//!
//! * a federated embedding network ([`model`]) trained across per-student
//!   clients with FedAvg or FedProx aggregation ([`fed`]);
//! * a centralized second-order gradient-boosted tree ensemble ([`boost`]).
//!
//! Both report through the shared classification metrics in [`metrics`].

pub mod boost;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fed;
pub mod metrics;
pub mod model;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
