//! Experiment runner for `blo-core`: flat-file configuration, experiment
//! drivers, property check suites and CSV output.

pub mod checks;
pub mod config;
pub mod experiments;
pub mod output;
