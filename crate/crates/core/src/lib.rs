pub mod alteration;
pub mod augment;
pub mod dsp;
pub mod error;
pub mod features;
pub mod nn;
pub mod objective;
pub mod par;
pub mod rng;
pub mod trainer;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
