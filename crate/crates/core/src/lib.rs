// SPDX-License-Identifier: Apache-2.0

//! Numerical lab for single-layer multi-head transformers on generalized
//! D-retrieval targets.
//!
//! - [`numerics`]: matrices, scaled softmax, a reverse-mode tape, Adam.
//! - [`tasks`]: retrieval targets `F0(min_{t in S_i} f_i(x(t)))` and datasets.
//! - [`model`]: the single-layer transformer, its gradients and training.
//! - [`constructions`]: explicit approximators (softmin heads, ReLU max,
//!   stacked networks, memorization) and their verifiers.
//! - [`harness`]: the `(h, T, N, seed)` training grid.
//! - [`analysis`]: NMSE, reversal score, scaling-law fit, transition detection.

pub mod analysis;
pub mod constructions;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod tasks;

pub use error::{Error, Result};
