//! Backup-sensor configuration optimization.
//!
//! Given per-sensor dropout probabilities, backup costs and a cost budget, the
//! crate estimates episode returns under pairwise sensor dropouts from a
//! budgeted episode oracle, turns the selection problem into a QUBO with a
//! slack-encoded budget penalty, and solves it with Tabu Search.
//!
//! Modules:
//! - [`model`]: instances, dropout algebra, configurations and return tables.
//! - [`estimator`]: momentum-prioritized and round-robin return estimation.
//! - [`qubo`]: the second-order return approximation and QUBO assembly.
//! - [`solver`]: Tabu Search, exhaustive search and the end-to-end pipeline.
//! - [`simenv`]: synthetic ground-truth models, oracles and exact evaluators.

pub mod error;
pub mod estimator;
pub mod model;
pub mod qubo;
pub mod simenv;
pub mod solver;

pub use error::{Error, Result};
