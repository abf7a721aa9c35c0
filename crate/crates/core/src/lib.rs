//! Numerical core for the LPC-SM autoregressive block family.
//!
//! Everything here is allocation-only (`alloc`, no `std`): dense tensors with a
//! reverse-mode tape, the orthogonal novelty transport (ONT) geometry, the block
//! components (local attention, dual-timescale memory, predictive correction,
//! sparse event control, Sinkhorn residual routing), the five-term objective,
//! the optimizer and the incremental decode runtime. IO, configuration files and
//! the CLI live in the companion `lpcsm` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attention;
pub mod autodiff;
pub mod controller;
pub mod correction;
mod error;
pub mod gradcheck;
pub mod math;
pub mod memory;
pub mod mhc;
pub mod model;
pub mod norm;
pub mod objective;
pub mod ont;
pub mod optim;
pub mod params;
pub mod rng;
pub mod runtime;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradReport};
pub use model::{ModelConfig, Toggles};
pub use objective::{LossBreakdown, LossWeights};
pub use params::ParameterStore;
pub use tensor::Tensor;
