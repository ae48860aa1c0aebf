//! Mutual-information view of preference alignment.
//!
//! Everything runs on finite prompt × response grids or on small Gaussian
//! samples, in 64-bit floats.

pub mod critics;
pub mod diffcore;
pub mod error;
pub mod estimators;
pub mod gauss_bench;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod policy;
pub mod rng;
pub mod runner;
pub mod starvation;
pub mod toy_sim;

pub use error::{Error, Result};
