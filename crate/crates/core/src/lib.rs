//! Autoregressive distillation (ARD) of diffusion transformers, end to end at
//! desk scale.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: a small dense tensor engine with a reverse-mode tape.
//! * [`teacher`]: VP schedule, analytic Gaussian-mixture scores with
//!   classifier-free guidance, a Heun probability-flow ODE solver and the
//!   trajectory dataset format.
//! * [`student`]: the history-aware diffusion transformer, its attention
//!   masks and the KV-cache used for autoregressive inference.
//! * [`training`]: regression and hinge-discriminator objectives, Adam, EMA
//!   and the training loop.
//! * [`inference`]: cached autoregressive sampling and trajectory injection.
//! * [`analysis`]: attention reports, FLOPs accounting, exposure-bias
//!   harness and MMD.
//! * [`config`]: experiment configuration and cross-field validation.

pub mod analysis;
pub mod config;
mod error;
pub mod inference;
pub mod par;
pub mod rng;
pub mod student;
pub mod teacher;
pub mod tensor;
pub mod training;

pub use error::{ArdError, Result};
