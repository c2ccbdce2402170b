//! Residual mixture networks for invariant relational reasoning.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense NCHW tensors, a reverse-mode tape and SGD with momentum.
//! - [`nn`]: BasicBlock residual units, the gater, mixture modules, and the
//!   `ResMixNet(E, D)` / CIFAR-style ResNet builders with parameter accounting.
//! - [`data`]: MNIST IDX ingestion and the MNIST Parity / colorized Pentomino
//!   generators together with the binary dataset container.
//! - [`train`]: the SGD training recipe, checkpoints, evaluation and sweeps.
//! - [`verify`]: finite-difference gradient checks, the naive convolution
//!   reference, dataset audits and the parameter budget check.

pub mod data;
pub mod error;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use nn::{Model, ModelConfig};
pub use tensor::{DType, Mode, Scalar, Tape, Tensor, Var};
