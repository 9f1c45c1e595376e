//! Dependency-free dense Q-network, RMSProp and experience replay.

pub mod checkpoint;
mod network;
mod replay;
mod rmsprop;

pub use network::{Dense, Gradients, QNetwork, TrainingSample};
pub use replay::{Experience, ReplayMemory};
pub use rmsprop::{RmsProp, RmsPropConfig};
