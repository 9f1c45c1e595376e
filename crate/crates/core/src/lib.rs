//! Multi-agent deep Q-learning for V2V spectrum and power allocation.

pub mod baselines;
pub mod channel;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod marl;
pub mod nn;
pub mod seed;
pub mod topology;

pub use error::{Error, Result};
