//! IO, file formats, benchmarking, and run drivers for the `voxtr` CLI.
//!
//! The algorithmic library lives in `voxtr-core`; the independent references
//! live in `voxtr-oracle`. This crate adds the parts that need an operating
//! system: checkpoint and history files, wall-clock measurement, report
//! writers, and the subcommand drivers the binary dispatches to.

pub mod bench;
pub mod checkpoint;
pub mod commands;
pub mod history;
pub mod report;
