//! Relevance-masked denoising diffusion.
//!
//! A denoising diffusion model is trained jointly with a variational
//! information-bottleneck relevance mask so that, at inference, only the
//! feature coordinates carrying signal-relevant information are denoised;
//! the remaining coordinates stay Gaussian noise. Everything runs on plain
//! `f64` vectors with hand-written reverse-mode gradients, which keeps the
//! whole training objective checkable against central finite differences.
//!
//! Module map:
//! - [`params`], [`rng`], [`gradcheck`] — flat parameter vectors, seeded
//!   counter-style RNG streams, finite-difference gradient checking
//! - [`schedule`] — noise schedule tables and the forward process
//! - [`net`] — the three MLPs (denoiser, mask encoder, signal decoder)
//! - [`vib`] — mask distribution, reparameterized sampling, closed-form KL
//! - [`loss`], [`optim`], [`train`] — objectives, Adam, the training loop
//! - [`sampler`] — ancestral sampling and denoiser-based relevance scores
//! - [`data`], [`stats`], [`eval`] — synthetic tasks and evaluation metrics
//! - [`config`], [`checkpoint`], [`manifest`], [`cli`] — the command surface

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
mod mlp;
pub mod net;
pub mod optim;
pub mod params;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod stats;
pub mod train;
pub mod vib;

pub use error::{Error, Result};
pub use params::{Layout, ParamVector};
pub use rng::RngStream;
pub use schedule::{Schedule, ScheduleKind};
pub use train::TrainMode;
