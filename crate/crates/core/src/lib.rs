//! Measurement and analysis of address space layout randomization.
//!
//! Samples of object addresses are collected from live processes or
//! simulated from declarative policies, their absolute and pairwise
//! entropies are estimated, and the results are turned into attack costs.

pub mod attack;
pub mod error;
pub mod estimate;
pub mod layout;
pub mod report;
pub mod sample;
pub mod sampler;
pub mod special;
pub mod synth;

pub use error::{Error, Result};
