//! Command-line front end for `otkit-core`: measure files in, JSON reports
//! and CSV artifacts out, plus the scaling benchmarks.

pub mod bench;
pub mod commands;
pub mod report;
