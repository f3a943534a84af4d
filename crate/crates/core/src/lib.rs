//! Learnable total variation denoising.
//!
//! A small convolutional network predicts a per-pixel regularization map
//! that drives an unrolled primal-dual TV solver; the whole pipeline is
//! trained end to end through a reverse-mode tape. The crate also ships a
//! low-dose CT simulator for generating paired training data and the
//! evaluation harness used to compare against scalar-λ TV.

pub mod cli;
pub mod ct_sim;
pub mod error;
pub mod lambda_model;
pub mod model;
pub mod objective;
pub mod params;
pub mod selftest;
pub mod solver;
pub mod tensor;
pub mod trainer;

pub use error::{LtvError, Result};
pub use tensor::{Tape, Tensor, Var};
