pub mod barrier;
pub mod config;
pub mod controller;
pub mod error;
pub mod forecast;
pub mod geometry;
pub mod harness;
pub mod kinematics;
pub mod qp;
pub mod sim;

pub use error::{Error, Result};
