//! Verifier-coupled coverage selection for RL training pools.
//!
//! Instances carry cluster-mass coordinates and verifier success counts.
//! The crate turns these into per-instance design vectors under a
//! difficulty-versus-trainability metric and picks a subset by greedy
//! log-determinant maximization, with baselines and audit diagnostics.

pub mod error;
pub mod linalg;
pub mod rng;
pub mod pool;
pub mod weights;
pub mod coords;
pub mod metric;
pub mod gradblock;
pub mod select;
pub mod baselines;
pub mod clustering;
pub mod diagnostics;
pub mod synth;

pub use error::{Error, Result};
pub use pool::{InstancePool, PipelineConfig};
pub use select::{SelectionMode, SelectionResult};
