//! Simulation, deep Q-learning and evaluation for UAV target search over
//! fields with clustered targets.

pub mod baseline;
pub mod config;
pub mod dqn;
pub mod env;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod field;
pub mod grid;
pub mod nn;
pub mod render;
pub mod rng;
pub mod sensing;
pub mod stats;

pub use error::{Error, Result};
