//! Joint autocurricula over reward-machine tasks and gridworld levels.

pub mod alphabet;
pub mod curriculum;
pub mod error;
pub mod gridworld;
pub mod metrics;
pub mod mutations;
pub mod problem;
pub mod reward_machine;
pub mod rng;
pub mod samplers;
pub mod solvability;
pub mod students;

pub use error::{Error, Result};
pub use problem::Problem;
