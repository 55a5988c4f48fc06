//! Conditional Brownian-bridge diffusion between paired latents.
//!
//! The forward chain starts at a post-event latent `z_b` (t = 0) and is pinned
//! to the pre-event latent `z_a` at t = T. Generation runs the chain backwards
//! from `z_a`, guided by a small conditional noise predictor that attends over
//! condition tokens.
//!
//! This crate is `no_std` (it needs `alloc`). File formats, the training loop
//! with checkpointing and the command-line tool live in the `bbridge` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bridge;
pub mod codec;
pub mod conditioning;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod eval;
mod linalg;
pub mod numerics;
pub mod schedule;
pub mod training;

pub use crate::bridge::{sample, NoisePredictor, OracleDenoiser, SampleOptions, SampleTrace, TraceMode};
pub use crate::codec::Codec;
pub use crate::conditioning::{ConditionConfig, ConditionPayload, ConditionTokens};
pub use crate::data::PairedSample;
pub use crate::denoiser::{DenoiserConfig, DenoiserParams};
pub use crate::error::{Error, Result};
pub use crate::numerics::{RngState, Tensor};
pub use crate::schedule::{BridgeSchedule, ScheduleConfig, StepCoefficients};
pub use crate::training::{TrainConfig, TrainState, WeightMode};
