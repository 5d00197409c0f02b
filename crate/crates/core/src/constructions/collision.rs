// SPDX-License-Identifier: Apache-2.0

//! Width lower bound for a feed-forward block that must separate nearby
//! post-attention vectors, and a search for such pairs.
//!
//! A 2-layer block `V σ(U p + b) + c` of width `m` with entries bounded by
//! 1 moves by at most `m √n |Δp|_2` on `n`-dimensional inputs, so telling
//! apart two inputs at distance `A` whose targets differ by `B` needs
//! `m ≥ B / (A √n)`.
//!
//! The search is evidence, not a certificate: it perturbs a window of
//! positions in one input coordinate at a time, then refines the best pair
//! by coordinate descent over a grid.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::memorization::MemorizationModel;
use super::softmin::SoftminHeadModel;
use crate::error::{invalid, Result};
use crate::model::TransformerParams;
use crate::numerics::matrix::l2_distance;
use crate::numerics::rng;
use crate::tasks::{evaluate_target, sample_sequence, RetrievalTask, Sequence, TokenDistribution};

/// `ceil(B / (A √n))`, saturating at `u64::MAX`. Quotients within `1e-12`
/// (relative) of an integer count as that integer.
pub fn ffn_width_lower_bound(a: f64, b: f64, n: usize) -> Result<u64> {
    if a.is_nan() || a <= 0.0 {
        return Err(invalid!("distance A must be positive, got {a}"));
    }
    if b.is_nan() || b < 0.0 {
        return Err(invalid!("gap B must be nonnegative, got {b}"));
    }
    if n == 0 {
        return Err(invalid!("input dimension must be positive"));
    }
    let q = b / (a * (n as f64).sqrt());
    let r = q.round();
    let q = if (q - r).abs() <= 1e-12 * r.max(1.0) {
        r
    } else {
        q.ceil()
    };
    // `as` saturates at u64::MAX and maps +inf there as well
    Ok(q as u64)
}

/// `k = (T/4 - s - D + 1) / ((n+1) s + 1) - 1`.
pub fn bottleneck_exponent(seq_len: usize, s: usize, n: usize, d: usize) -> f64 {
    (seq_len as f64 / 4.0 - s as f64 - d as f64 + 1.0) / ((n + 1) as f64 * s as f64 + 1.0) - 1.0
}

/// Anything with a post-attention vector.
pub trait PostAttention {
    fn heads(&self) -> usize;
    fn post_attention(&self, x: &Sequence) -> Result<Vec<f64>>;
}

impl PostAttention for TransformerParams {
    fn heads(&self) -> usize {
        self.config.heads
    }

    fn post_attention(&self, x: &Sequence) -> Result<Vec<f64>> {
        TransformerParams::post_attention(self, x)
    }
}

impl PostAttention for SoftminHeadModel {
    fn heads(&self) -> usize {
        SoftminHeadModel::heads(self)
    }

    fn post_attention(&self, x: &Sequence) -> Result<Vec<f64>> {
        SoftminHeadModel::post_attention(self, x)
    }
}

impl PostAttention for MemorizationModel {
    fn heads(&self) -> usize {
        1
    }

    fn post_attention(&self, x: &Sequence) -> Result<Vec<f64>> {
        MemorizationModel::post_attention(self, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionConfig {
    /// Number of pair evaluations.
    pub budget: usize,
    pub seed: u64,
    pub seq_len: usize,
    /// Positions `0..window` may differ; default `ceil(T/4)`.
    pub window: Option<usize>,
    /// Grid points per coordinate in the descent phase.
    pub grid_points: usize,
    /// Pairs whose targets differ by no more than this are skipped.
    pub min_gap: f64,
}

impl CollisionConfig {
    pub fn new(seq_len: usize, budget: usize, seed: u64) -> Self {
        Self {
            budget,
            seed,
            seq_len,
            window: None,
            grid_points: 21,
            min_gap: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub x: Sequence,
    pub x_prime: Sequence,
    pub window: usize,
    /// `|P(x) - P(x')|_2` on post-attention vectors.
    pub distance: f64,
    /// `|F(x) - F(x')|` on targets.
    pub gap: f64,
    /// `gap / distance`, infinite at distance 0.
    pub ratio: f64,
    /// Width implied by [`ffn_width_lower_bound`]; `None` when the distance
    /// is 0 and no finite width separates the pair.
    pub width_bound: Option<u64>,
    pub post_attention_dim: usize,
    pub evaluations: usize,
}

/// Pair search for a model with fewer heads than retrieved features.
pub fn find_attention_collision<M: PostAttention + ?Sized>(
    model: &M,
    task: &RetrievalTask,
    config: &CollisionConfig,
) -> Result<Option<CollisionReport>> {
    if model.heads() >= task.intrinsic_dim() {
        return Err(invalid!(
            "collision probe needs h < D, got h = {} and D = {}",
            model.heads(),
            task.intrinsic_dim()
        ));
    }
    search_collisions(model, task, config)
}

struct Candidate {
    xp: Sequence,
    distance: f64,
    gap: f64,
}

impl Candidate {
    fn ratio(&self) -> f64 {
        if self.distance == 0.0 {
            f64::INFINITY
        } else {
            self.gap / self.distance
        }
    }

    fn beats(&self, other: &Candidate) -> bool {
        let (a, b) = (self.ratio(), other.ratio());
        a > b || (a == b && self.gap > other.gap)
    }
}

/// The search behind [`find_attention_collision`] without the head check.
/// Returns `None` when every evaluated pair had a target gap below
/// `min_gap`.
pub fn search_collisions<M: PostAttention + ?Sized>(
    model: &M,
    task: &RetrievalTask,
    config: &CollisionConfig,
) -> Result<Option<CollisionReport>> {
    if config.budget == 0 {
        return Err(invalid!("search budget must be positive"));
    }
    let t = config.seq_len;
    let d = task.input_dim;
    let window = config.window.unwrap_or(t.div_ceil(4)).clamp(1, t);
    if config.grid_points < 2 {
        return Err(invalid!("grid needs at least 2 points"));
    }
    let (lo, hi) = match task.inputs {
        TokenDistribution::UnitCube => (0.0, 1.0),
        TokenDistribution::Gaussian => (-3.0, 3.0),
    };
    let mut r = rng::stream(config.seed, &[0xc011]);
    let mut used = 0usize;

    let eval = |x_post: &[f64], fx: f64, xp: Sequence| -> Result<Candidate> {
        let p = model.post_attention(&xp)?;
        let gap = (fx - evaluate_target(task, &xp)?).abs();
        Ok(Candidate {
            distance: l2_distance(x_post, &p),
            gap,
            xp,
        })
    };

    // random phase: half the budget
    let mut best: Option<(Sequence, Vec<f64>, f64, Candidate)> = None;
    let random_budget = config.budget.div_ceil(2);
    while used < random_budget {
        let x = sample_sequence(&mut r, t, d, task.inputs);
        let px = model.post_attention(&x)?;
        let fx = evaluate_target(task, &x)?;
        let j = r.random_range(0..d);
        let fresh = sample_sequence(&mut r, window, 1, task.inputs);
        let mut xp = x.clone();
        for s in 0..window {
            xp.tokens_mut()[(s, j)] = fresh.token(s)[0];
        }
        let c = eval(&px, fx, xp)?;
        used += 1;
        if c.gap > config.min_gap && best.as_ref().is_none_or(|b| c.beats(&b.3)) {
            best = Some((x, px, fx, c));
        }
    }

    // coordinate descent on x' over the window
    if let Some((x, px, fx, mut cur)) = best.take() {
        let step = (hi - lo) / (config.grid_points - 1) as f64;
        'sweeps: loop {
            let mut improved = false;
            for s in 0..window {
                for j in 0..d {
                    for g in 0..config.grid_points {
                        if used >= config.budget {
                            break 'sweeps;
                        }
                        let mut xp = cur.xp.clone();
                        xp.tokens_mut()[(s, j)] = lo + g as f64 * step;
                        if xp == cur.xp {
                            continue;
                        }
                        let c = eval(&px, fx, xp)?;
                        used += 1;
                        if c.gap > config.min_gap && c.beats(&cur) {
                            cur = c;
                            improved = true;
                        }
                    }
                }
            }
            if !improved || cur.distance == 0.0 {
                break;
            }
        }
        best = Some((x, px, fx, cur));
    }

    let Some((x, px, _, c)) = best else {
        return Ok(None);
    };
    let width_bound = if c.distance > 0.0 {
        Some(ffn_width_lower_bound(c.distance, c.gap, px.len())?)
    } else {
        None
    };
    Ok(Some(CollisionReport {
        ratio: c.ratio(),
        x,
        x_prime: c.xp,
        window,
        distance: c.distance,
        gap: c.gap,
        width_bound,
        post_attention_dim: px.len(),
        evaluations: used,
    }))
}
