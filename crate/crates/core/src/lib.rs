//! Simulation and optimization library for intelligent-reflector assisted
//! mmWave multi-user downlink.

pub mod channel;
pub mod drl;
pub mod error;
pub mod estimation;
pub mod fp;
pub mod harness;
pub mod linalg;
pub mod rng;
pub mod scenario;
pub mod units;

pub use error::{Error, Result};
