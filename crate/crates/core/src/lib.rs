//! Online learning against smoothed adversaries with ERM-oracle access.

pub mod adversary;
pub mod bandit;
pub mod coupling;
pub mod error;
pub mod ftpl;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod relax;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
