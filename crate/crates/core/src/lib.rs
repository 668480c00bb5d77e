//! Variance-reduction lab for DDPG-style actor-critic agents.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffmath`]: dense MLPs with exact reverse-mode gradients, Adam, clipping,
//!   schedules and the normalization primitives (penultimate L2 normalization,
//!   layer norm, spectral norm, output norm).
//! - [`envworld`]: deterministic toy continuous-control tasks with dense and
//!   sparse rewards.
//! - [`agent`]: the actor / twin-critic learner with every stabilization fix as
//!   an independent switch.
//! - [`bench`]: multi-seed runs and the statistics used to measure training
//!   variance (variance decomposition, paired-seed correlation, probes).
//! - [`cli`]: config files, method presets, file formats and the command
//!   implementations behind the `varlab` binary.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod agent;
pub mod bench;
pub mod cli;
pub mod diffmath;
pub mod envworld;
mod error;
pub mod rng;

pub use error::{Error, Result};
