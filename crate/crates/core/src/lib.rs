pub mod approximator;
pub mod cli;
pub mod envs;
pub mod error;
pub mod policy;
pub mod planner;
pub mod replay;
pub mod theory_lab;
pub mod trainer;
pub mod world_model;

pub use error::{BoomError, Result};
