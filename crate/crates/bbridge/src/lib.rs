//! Files, training loop and command-line tool for `bbridge-core`.
//!
//! | format | contents |
//! |--------|----------|
//! | `BBT1` | one tensor |
//! | `BBDS1` | a dataset of paired samples |
//! | `BBCK1` | a resumable checkpoint with optimizer, RNG and codec state |
//!
//! Images are 8-bit PGM/PPM.

pub mod checkpoint;
pub mod checks;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod format;
pub mod ingest;
pub mod pipeline;
pub mod pnm;
pub mod trainer;

pub use crate::error::{CliError, Result};
