pub mod adversary;
pub mod cli;
pub mod cohort;
pub mod evaluation;
pub mod losses;
pub mod shape_space;
pub mod ssm_net;
pub mod trainer;
mod error;

pub use error::{Error, Result};
