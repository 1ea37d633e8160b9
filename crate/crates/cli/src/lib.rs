//! Command-line surface of speech-simclr: run configuration, synthetic data,
//! linear probing, experiments and the `sscl` commands.

pub mod commands;
pub mod config;
pub mod data;
pub mod experiment;
pub mod probe;
pub mod synth;
