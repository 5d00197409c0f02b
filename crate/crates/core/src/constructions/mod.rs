// SPDX-License-Identifier: Apache-2.0

//! Explicit constructions: the head-per-feature softmin approximator, the
//! shallow ReLU max network, layer stacking, the single-head memorization
//! model, order-statistic recovery, the width lower bound and an empirical
//! attention-collision probe.
//!
//! Every builder is pure. Verification sweeps return a [`VerificationReport`]
//! that serializes as `{construction, parameters, bound, max_observed,
//! witnesses, ...}`.

mod collision;
mod memorization;
mod net;
mod order_stats;
mod relu_max;
mod softmin;
mod stacking;

use serde::{Deserialize, Serialize};

use crate::tasks::Sequence;

pub use collision::{
    bottleneck_exponent, ffn_width_lower_bound, find_attention_collision, search_collisions, CollisionConfig,
    CollisionReport, PostAttention,
};
pub use memorization::{build_memorization_model, MemorizationModel};
pub use net::{Affine, ReluNet};
pub use order_stats::{order_statistic_features, smooth_selector, OrderStats};
pub use relu_max::{build_relu_max, build_relu_min, ReluMaxNet};
pub use softmin::{
    build_softmin_model, build_softmin_model_with_beta, exact_component_nets, select_beta, softmin_bound,
    verify_softmin_bound, verify_softmin_model, ComponentNet, SoftminHeadModel, BETA_CLIP,
};
pub use stacking::{stack_networks, StackedNet};

/// One evaluated input kept as evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// Input tokens, one row per position.
    pub input: Vec<Vec<f64>>,
    pub observed: f64,
    pub expected: f64,
    /// Signed quantity compared against the bound.
    pub deviation: f64,
    pub note: String,
}

impl Witness {
    pub fn new(input: &Sequence, observed: f64, expected: f64, deviation: f64, note: impl Into<String>) -> Self {
        Self {
            input: input.clone().into(),
            observed,
            expected,
            deviation,
            note: note.into(),
        }
    }
}

const MAX_WITNESSES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub construction: String,
    pub parameters: serde_json::Value,
    pub bound: f64,
    /// Largest observed deviation (its meaning is construction specific).
    pub max_observed: f64,
    pub samples: usize,
    pub violations: usize,
    /// The worst case first, then up to a few violations.
    pub witnesses: Vec<Witness>,
}

impl VerificationReport {
    pub fn new(construction: impl Into<String>, parameters: serde_json::Value, bound: f64) -> Self {
        Self {
            construction: construction.into(),
            parameters,
            bound,
            max_observed: f64::NEG_INFINITY,
            samples: 0,
            violations: 0,
            witnesses: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.samples > 0
    }

    /// Records one check. `magnitude` feeds `max_observed`; the witness is
    /// kept if it is the new worst case or a violation.
    pub(crate) fn observe(&mut self, magnitude: f64, violated: bool, witness: impl FnOnce() -> Witness) {
        self.samples += 1;
        let worst = magnitude > self.max_observed || self.witnesses.is_empty();
        if worst {
            self.max_observed = magnitude;
        }
        if violated {
            self.violations += 1;
        }
        if worst || (violated && self.witnesses.len() < MAX_WITNESSES) {
            let w = witness();
            if worst {
                if self.witnesses.is_empty() {
                    self.witnesses.push(w);
                } else {
                    self.witnesses[0] = w;
                }
            } else {
                self.witnesses.push(w);
            }
        }
    }

    /// Max-reduction of two sweeps over disjoint inputs.
    pub(crate) fn merge(mut self, other: Self) -> Self {
        self.samples += other.samples;
        self.violations += other.violations;
        let mut others = other.witnesses.into_iter();
        if other.max_observed > self.max_observed {
            self.max_observed = other.max_observed;
            if let Some(w) = others.next() {
                if self.witnesses.is_empty() {
                    self.witnesses.push(w);
                } else {
                    let old = std::mem::replace(&mut self.witnesses[0], w);
                    self.witnesses.push(old);
                }
            }
        } else {
            others.next();
        }
        for w in others {
            if self.witnesses.len() >= MAX_WITNESSES {
                break;
            }
            self.witnesses.push(w);
        }
        self
    }
}
