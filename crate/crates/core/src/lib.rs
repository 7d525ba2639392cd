//! Recursive encoder-decoder edge detection.
//!
//! The crate carries everything needed to train and benchmark the network
//! without external frameworks: a small reverse-mode autodiff engine
//! ([`autodiff`]), the recursive encoder-decoder itself ([`model`]), the
//! training loop ([`training`]), ground-truth generation and augmentation
//! ([`data`]), and the ODS/OIS/AP boundary benchmark ([`evaluation`]).

pub mod autodiff;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod model;
pub mod seed;
pub mod tensor;
pub mod training;

pub use autodiff::{BatchStats, NormStats, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
