//! Interpolated MLPs.
//!
//! A plain multi-layer perceptron is trained side by side with a structured
//! "prior" network (a small CNN or an MLP-Mixer). After every epoch each
//! prior layer is rewritten as the dense matrix it implicitly applies to the
//! flattened input, and the MLP's weights are pulled toward it:
//! `W ← (1 − α)·W + α·W_P`. `α = 0` leaves a plain MLP, `α = 1` makes the
//! MLP's layers equal to the prior's.
//!
//! Module map:
//!
//! - [`tensor`], [`ops`], [`rng`]: dense math, the five layer primitives with
//!   explicit backward passes, Adam, and the seeded random stream.
//! - [`structured`]: dense equivalents of convolutions, patchify and
//!   transpose permutations, and shared-weight (block-diagonal) layers.
//! - [`model`]: the network definitions, forward/backward, prior extraction
//!   and checkpoints.
//! - [`train`]: schedules, the paired training loop, evaluation and sweeps.
//! - [`data`]: CIFAR binary ingestion, normalization, augmentation, subsets.
//! - [`config`]: flat key/value run configuration, hashing and run manifests.

pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod ops;
pub mod rng;
pub mod selftest;
pub mod structured;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{matmul, Scalar, Tensor};
