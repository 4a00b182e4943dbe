//! Command implementations behind the `tinyflow` binary: dataset handling,
//! training with either engine, gradient checking and graph export.

pub mod commands;
pub mod dataset;
