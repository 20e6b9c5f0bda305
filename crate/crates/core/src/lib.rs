//! Numeric core for the multimodal diagnostic transformer (MDT).
//!
//! Everything in this crate is pure computation over heap-allocated buffers:
//! a dense f32 tensor type with a tape-based reverse-mode autodiff engine,
//! the MDT model itself (bidirectional multimodal attention + self-attention
//! stack), the comparison baselines, the training loop, evaluation statistics,
//! and attention-rollout attribution. File formats, dataset generation and the
//! CLI live in the companion `mdt` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod baselines;
pub mod check;
pub mod checkpoint;
pub mod error;
pub mod interpret;
pub mod mathx;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod record;
pub mod tape;
pub mod tensor;
pub mod tokenize;
pub mod train;

pub use error::{Error, Result};
pub use tape::{GradStore, Tape};
pub use tensor::Tensor;
