// SPDX-License-Identifier: Apache-2.0

//! Dense linear algebra, activations, the scaled softmax, a reverse-mode
//! tape, Adam, and a finite-difference oracle. Everything is `f64`: the
//! construction bounds carry `e^{-beta}` terms that vanish in `f32` near
//! `beta = 90`.

pub mod activation;
pub mod adam;
pub mod finite_diff;
pub mod linalg;
pub mod matrix;
pub mod rng;
pub mod tape;

pub use activation::{gelu, relu, softmax_beta};
pub use adam::{AdamConfig, AdamState};
pub use matrix::{Matrix, Trans};
pub use tape::{Gradients, NodeId, Tape};
