#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agent;
pub mod barlow;
pub mod cli;
pub mod config;
pub mod encoders;
pub mod env;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod nn;
pub mod ppo;
pub mod randomization;
pub mod rewards;
pub mod terrain;
pub mod trainer;

pub use error::{Error, Result};
