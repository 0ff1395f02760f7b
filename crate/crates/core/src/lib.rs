//! Two-step state estimation for unbalanced three-phase distribution feeders.

pub mod error;
pub mod estimator;
pub mod feeder;
pub mod harness;
pub mod linalg;
pub mod measurement;
pub mod network;
pub mod parallel;
pub mod prior;
pub mod rng;
pub mod subspace;

pub use error::{Error, Result};
