// SPDX-License-Identifier: Apache-2.0

//! The single-layer `h`-head transformer
//!
//! ```text
//! y = F( c0 + W_O Concat_i( sum_t softmax_beta[(W_Qi c0)ᵀ W_Ki x̂(t)] W_Vi x̂(t) ) )
//! ```
//!
//! with a two-layer ReLU encoder `x̂(t) = P(x(t))`, a trainable class token
//! `c0`, and a two-layer GeLU feed-forward block `F`. Attention sums over the
//! `T` content tokens only; there is no positional encoding.

mod batch;
pub mod checkpoint;
mod params;
pub mod tape_graph;
pub mod train;

pub use batch::BatchWorkspace;
pub use params::{ModelConfig, TransformerParams};
pub use train::{predict, train, LrSchedule, RunRecord, RunStatus, TrainConfig, TrainOutcome};
