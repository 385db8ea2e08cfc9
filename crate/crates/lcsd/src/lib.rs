//! Language-conditioned skill discovery at desk scale.
//!
//! Joint training of a vector-quantized skill codebook (with probabilistic
//! code reinitialization and instruction-recovery decoding) and a
//! conditional denoising-diffusion imitation policy, exercised end to end on
//! a synthetic multi-task tabletop environment with a scripted expert.
//!
//! Crate layout:
//! - [`tensor`], [`nn`]: fp64 tape autodiff, MLPs, Adam, gradient checking
//! - [`rng`]: seeded splittable random streams
//! - [`embed`]: frozen deterministic text embedder
//! - [`env`], [`dataset`]: the SkillGrid world, scripted expert, JSONL datasets
//! - [`quantizer`]: skill encoder, VQ codebook, reinitialization, recovery decoder
//! - [`diffusion`]: noise schedules, fusion-MLP denoiser, DDPM/DDIM samplers
//! - [`trainer`], [`checkpoint`]: the joint training loop and its file format
//! - [`metrics`]: rollouts, success tables, mutual information, skill-word maps
//! - [`config`], [`cli`]: key=value configs and the command-line front end

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod embed;
pub mod env;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod quantizer;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
