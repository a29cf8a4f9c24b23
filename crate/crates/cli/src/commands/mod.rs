//! Subcommand drivers. Each takes a typed options struct, writes its
//! artifacts under the chosen output directory (always including a
//! manifest), prints one line per check or result, and reports overall
//! success for the process exit code.

pub mod bench;
pub mod distill;
pub mod gradcheck;
pub mod verify;
