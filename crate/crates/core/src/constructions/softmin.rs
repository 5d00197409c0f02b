// SPDX-License-Identifier: Apache-2.0

//! One attention head per retrieved feature.
//!
//! Each token is embedded as `D` blocks `(Ψ_i(x(t)), r_i(t))`, where `Ψ_i`
//! is a 2-layer ReLU net for the component (`f_i` for a min, `1 - f_i` for
//! a max) and `r_i(t)` is `0` on `S_i` and `-1` elsewhere. Head `i` uses
//! `W_Q,i c0 = 1`, `W_K,i = [-1, 1]` and `W_V,i = I_2` on its block, so its
//! score is `-Ψ_i(x(t)) + r_i(t)` and its first output coordinate is the
//! softmin readout `z̃_i = Σ_t σ_t Ψ_i(x(t))`. The feed-forward block `Φ`
//! reads `z̃_i` from each block and applies `F0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{Affine, ReluNet};
use super::{VerificationReport, Witness};
use crate::error::{invalid, Error, Result};
use crate::numerics::activation::softmax_beta_into;
use crate::numerics::Matrix;
use crate::tasks::{evaluate_target, Extremum, RetrievalTask, Sequence};

/// β is capped here: beyond it `e^{-β}` underflows and larger values only
/// sharpen ties that rounding already decides.
pub const BETA_CLIP: f64 = 700.0;

/// A 2-layer ReLU net `Ψ : R^d -> R` together with its sup error `δ`
/// against the function it stands for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentNet {
    pub net: ReluNet,
    pub delta: f64,
}

impl ComponentNet {
    pub fn exact(net: ReluNet) -> Self {
        Self { net, delta: 0.0 }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.net.eval_unchecked(x)[0]
    }
}

/// Exact `Ψ_i` for tasks whose components are affine: `f_i` for a min
/// component and `1 - f_i` for a max component.
pub fn exact_component_nets(task: &RetrievalTask) -> Result<Vec<ComponentNet>> {
    let d = task.input_dim;
    task.components
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (w, b) = c
                .f
                .as_affine(d)
                .ok_or_else(|| invalid!("component {i} is not affine; supply a trained net with a measured error"))?;
            let (w, b) = match c.extremum {
                Extremum::Min => (w, b),
                Extremum::Max => (w.iter().map(|v| -v).collect(), 1.0 - b),
            };
            let map = Affine::new(Matrix::row_vector(w), vec![b])?;
            Ok(ComponentNet::exact(ReluNet::affine_as_relu(&map)))
        })
        .collect()
}

/// `(|S|-1)/(eβ) + T e^{-β}`.
pub fn softmin_bound(set_size: usize, seq_len: usize, beta: f64) -> f64 {
    (set_size.saturating_sub(1)) as f64 / (std::f64::consts::E * beta) + seq_len as f64 * (-beta).exp()
}

/// `β_ε = max{1, K, ln K}` with `K = 4 C_T L0 D / ε` and
/// `C_T = max{T/e, T}`, capped at [`BETA_CLIP`]. Returns `(β, capped)`.
pub fn select_beta(seq_len: usize, l0: f64, d: usize, epsilon: f64) -> (f64, bool) {
    let t = seq_len as f64;
    let c_t = (t / std::f64::consts::E).max(t);
    let k = 4.0 * c_t * l0 * d as f64 / epsilon;
    let beta = 1.0f64.max(k).max(k.ln());
    if beta > BETA_CLIP {
        (BETA_CLIP, true)
    } else {
        (beta, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftminHeadModel {
    pub task: RetrievalTask,
    pub seq_len: usize,
    pub beta: f64,
    /// `β_ε` hit [`BETA_CLIP`].
    pub beta_clipped: bool,
    pub epsilon: Option<f64>,
    pub components: Vec<ComponentNet>,
    /// Magnitude of the gate value off `S_i`; the construction uses 1.
    pub gate_offset: f64,
    /// `r_i(t)` for every head and position.
    pub gates: Vec<Vec<f64>>,
    /// Class token, `e_2` in every block.
    pub cls: Vec<f64>,
    pub w_q: Vec<Matrix>,
    pub w_k: Vec<Matrix>,
    pub w_v: Vec<Matrix>,
    pub w_o: Matrix,
    /// `Φ` on the post-attention vector.
    pub outer: ComponentNet,
    /// Lipschitz constant of `F0` with respect to the sup norm.
    pub l0: f64,
}

fn check_heads(task: &RetrievalTask, components: &[ComponentNet]) -> Result<()> {
    let d = task.intrinsic_dim();
    if components.len() != d {
        return Err(Error::Construction(format!(
            "h = D is required, got h = {} and D = {d}",
            components.len()
        )));
    }
    for (i, c) in components.iter().enumerate() {
        if c.net.depth() != 2 || c.net.input_dim() != task.input_dim || c.net.output_dim() != 1 {
            return Err(invalid!(
                "component net {i} must be a 2-layer map R^{} -> R, got {} layers {} -> {}",
                task.input_dim,
                c.net.depth(),
                c.net.input_dim(),
                c.net.output_dim()
            ));
        }
        if !(c.delta >= 0.0 && c.delta.is_finite()) {
            return Err(invalid!("component net {i} has error {}", c.delta));
        }
    }
    Ok(())
}

fn selector(rows: usize, cols: usize, hits: &[(usize, usize, f64)]) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for &(r, c, v) in hits {
        m[(r, c)] = v;
    }
    m
}

/// Builds the model with `β_ε` chosen so the total error is at most `ε`.
pub fn build_softmin_model(
    task: &RetrievalTask,
    seq_len: usize,
    epsilon: f64,
    components: Vec<ComponentNet>,
) -> Result<SoftminHeadModel> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid!("epsilon must be positive, got {epsilon}"));
    }
    check_heads(task, &components)?;
    let d = task.intrinsic_dim();
    let l0 = task.outer.lipschitz_l1(d);
    let allowed = epsilon / (4.0 * l0 * d as f64);
    for (i, c) in components.iter().enumerate() {
        if c.delta > allowed {
            return Err(Error::Construction(format!(
                "component {i}: δ = {} exceeds ε/(4 L0 D) = {allowed}",
                c.delta
            )));
        }
    }
    let (beta, clipped) = select_beta(seq_len, l0, d, epsilon);
    if clipped {
        log::warn!("β_ε exceeds {BETA_CLIP}; using β = {BETA_CLIP}");
    }
    let mut model = build_softmin_model_with_beta(task, seq_len, beta, components)?;
    model.beta_clipped = clipped;
    model.epsilon = Some(epsilon);
    let guaranteed = model.guaranteed_error();
    if guaranteed > epsilon {
        return Err(Error::Construction(format!(
            "guaranteed error {guaranteed} exceeds ε = {epsilon} at β = {beta}"
        )));
    }
    Ok(model)
}

/// Builds the model at a given `β ≥ 1`.
pub fn build_softmin_model_with_beta(
    task: &RetrievalTask,
    seq_len: usize,
    beta: f64,
    components: Vec<ComponentNet>,
) -> Result<SoftminHeadModel> {
    if !(beta >= 1.0 && beta.is_finite()) {
        return Err(Error::Construction(format!("β ≥ 1 is required, got β = {beta}")));
    }
    check_heads(task, &components)?;
    if let Some(t) = task.seq_len {
        if t != seq_len {
            return Err(invalid!("task has length {t}, model asked for {seq_len}"));
        }
    }
    if seq_len == 0 {
        return Err(invalid!("sequence length must be positive"));
    }
    let d = task.intrinsic_dim();
    let e = 2 * d;
    let w_q = (0..d).map(|i| selector(1, e, &[(0, 2 * i + 1, 1.0)])).collect();
    let w_k = (0..d)
        .map(|i| selector(1, e, &[(0, 2 * i, -1.0), (0, 2 * i + 1, 1.0)]))
        .collect();
    let w_v = (0..d)
        .map(|i| selector(2, e, &[(0, 2 * i, 1.0), (1, 2 * i + 1, 1.0)]))
        .collect();
    let cls = (0..e).map(|k| if k % 2 == 1 { 1.0 } else { 0.0 }).collect();

    // Φ(p) = F0(u) with u_i = p_{2i} for a min and 1 - p_{2i} for a max.
    let (w0, b0) = task.outer.as_affine(d);
    let mut phi_w = vec![0.0; e];
    let mut phi_b = b0;
    for (i, c) in task.components.iter().enumerate() {
        match c.extremum {
            Extremum::Min => phi_w[2 * i] = w0[i],
            Extremum::Max => {
                phi_w[2 * i] = -w0[i];
                phi_b += w0[i];
            }
        }
    }
    let outer = ComponentNet::exact(ReluNet::affine_as_relu(&Affine::new(
        Matrix::row_vector(phi_w),
        vec![phi_b],
    )?));

    let mut model = SoftminHeadModel {
        task: task.clone(),
        seq_len,
        beta,
        beta_clipped: false,
        epsilon: None,
        components,
        gate_offset: 1.0,
        gates: Vec::new(),
        cls,
        w_q,
        w_k,
        w_v,
        w_o: Matrix::identity(e),
        outer,
        l0: task.outer.lipschitz_l1(d),
    };
    model.set_gate_offset(1.0);
    model.check_weight_bound()?;
    Ok(model)
}

impl SoftminHeadModel {
    pub fn heads(&self) -> usize {
        self.components.len()
    }

    /// Resets `r_i(t)` to `-offset` off `S_i`.
    pub fn set_gate_offset(&mut self, offset: f64) {
        self.gate_offset = offset;
        self.gates = self
            .task
            .components
            .iter()
            .map(|c| {
                (0..self.seq_len)
                    .map(|t| if c.index_set.contains(t) { 0.0 } else { -offset })
                    .collect()
            })
            .collect();
    }

    /// Largest attention-weight magnitude.
    pub fn weight_bound(&self) -> f64 {
        let mats = self
            .w_q
            .iter()
            .chain(&self.w_k)
            .chain(&self.w_v)
            .chain(std::iter::once(&self.w_o));
        mats.map(Matrix::max_abs)
            .fold(self.cls.iter().fold(0.0, |a, v| a.max(v.abs())), f64::max)
    }

    pub fn check_weight_bound(&self) -> Result<()> {
        let w = self.weight_bound();
        if w > 1.0 {
            return Err(Error::Construction(format!(
                "attention weight of magnitude {w} exceeds 1"
            )));
        }
        Ok(())
    }

    pub fn check_input(&self, x: &Sequence) -> Result<()> {
        if x.len() != self.seq_len || x.dim() != self.task.input_dim {
            return Err(invalid!(
                "model expects {} tokens of dimension {}, got {} x {}",
                self.seq_len,
                self.task.input_dim,
                x.len(),
                x.dim()
            ));
        }
        Ok(())
    }

    fn embed(&self, x: &Sequence) -> Vec<Vec<f64>> {
        (0..x.len())
            .map(|t| {
                self.components
                    .iter()
                    .zip(&self.gates)
                    .flat_map(|(c, g)| [c.eval(x.token(t)), g[t]])
                    .collect()
            })
            .collect()
    }

    fn head_outputs_embedded(&self, emb: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut p = vec![0.0; emb.len()];
        (0..self.heads())
            .map(|i| {
                let q = self.w_q[i].matvec(&self.cls);
                let scores: Vec<f64> = emb
                    .iter()
                    .map(|e| crate::numerics::matrix::dot(&q, &self.w_k[i].matvec(e)))
                    .collect();
                softmax_beta_into(&scores, self.beta, &mut p);
                let values: Vec<Vec<f64>> = emb.iter().map(|e| self.w_v[i].matvec(e)).collect();
                convex_combination(&p, &values)
            })
            .collect()
    }

    /// Per-head outputs `Σ_t σ_t W_V,i e_t`.
    pub fn head_outputs(&self, x: &Sequence) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        Ok(self.head_outputs_embedded(&self.embed(x)))
    }

    /// Softmin readouts `z̃_i`.
    pub fn readouts(&self, x: &Sequence) -> Result<Vec<f64>> {
        Ok(self.head_outputs(x)?.into_iter().map(|o| o[0]).collect())
    }

    /// `c0 + W_O Concat(heads)`.
    pub fn post_attention(&self, x: &Sequence) -> Result<Vec<f64>> {
        let concat: Vec<f64> = self.head_outputs(x)?.into_iter().flatten().collect();
        Ok(self
            .w_o
            .matvec(&concat)
            .iter()
            .zip(&self.cls)
            .map(|(a, c)| a + c)
            .collect())
    }

    pub fn forward(&self, x: &Sequence) -> Result<f64> {
        let p = self.post_attention(x)?;
        Ok(self.outer.eval(&p))
    }

    /// `min_{t in S_i} Ψ_i(x(t))`.
    pub fn gated_minimum(&self, x: &Sequence, head: usize) -> f64 {
        let c = &self.task.components[head];
        c.index_set
            .positions(self.seq_len)
            .into_iter()
            .map(|t| self.components[head].eval(x.token(t)))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn head_bound(&self, head: usize) -> f64 {
        softmin_bound(
            self.task.components[head].index_set.size(self.seq_len),
            self.seq_len,
            self.beta,
        )
    }

    /// `δ0 + L0 max_i (δ_i + (|S_i|-1)/(eβ) + T e^{-β})`.
    pub fn guaranteed_error(&self) -> f64 {
        let worst = (0..self.heads())
            .map(|i| self.components[i].delta + self.head_bound(i))
            .fold(0.0, f64::max);
        self.outer.delta + self.l0 * worst
    }

    fn parameters(&self) -> serde_json::Value {
        serde_json::json!({
            "task": self.task.id,
            "T": self.seq_len,
            "D": self.heads(),
            "beta": self.beta,
            "beta_clipped": self.beta_clipped,
            "epsilon": self.epsilon,
            "gate_offset": self.gate_offset,
            "set_sizes": self.task.components.iter().map(|c| c.index_set.size(self.seq_len)).collect::<Vec<_>>(),
        })
    }
}

/// `Σ p_t v_t`, evaluated as `v_* + Σ_{t≠*} p_t (v_t - v_*)` around the
/// heaviest token `*`. Negligible weights then leave `v_*` exact, and when
/// `*` is the minimiser the result cannot round below it.
fn convex_combination(p: &[f64], values: &[Vec<f64>]) -> Vec<f64> {
    let star = p
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(t, _)| t);
    let anchor = &values[star];
    let mut out = vec![0.0; anchor.len()];
    for (t, (pt, v)) in p.iter().zip(values).enumerate() {
        if t == star {
            continue;
        }
        for (o, (vj, aj)) in out.iter_mut().zip(v.iter().zip(anchor)) {
            *o += pt * (vj - aj);
        }
    }
    out.iter_mut().zip(anchor).for_each(|(o, a)| *o += a);
    out
}

const CHUNK: usize = 256;

/// Checks `0 <= z̃_i - min_{S_i} Ψ_i <= (|S_i|-1)/(eβ) + T e^{-β}` for every
/// head and sequence. `max_observed` is the largest `z̃_i - min`.
pub fn verify_softmin_bound(model: &SoftminHeadModel, sequences: &[Sequence]) -> Result<VerificationReport> {
    for x in sequences {
        model.check_input(x)?;
        if !x.in_unit_cube() {
            return Err(invalid!("softmin bound check needs tokens in [0,1]^d"));
        }
    }
    let bound = (0..model.heads()).map(|i| model.head_bound(i)).fold(0.0, f64::max);
    let fresh = || VerificationReport::new("softmin_bound", model.parameters(), bound);
    Ok(sequences
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut rep = fresh();
            for x in chunk {
                let z = model.head_outputs_embedded(&model.embed(x));
                for (i, out) in z.iter().enumerate() {
                    let m = model.gated_minimum(x, i);
                    let gap = out[0] - m;
                    let hb = model.head_bound(i);
                    let side = if gap < 0.0 {
                        Some("lower")
                    } else if gap > hb {
                        Some("upper")
                    } else {
                        None
                    };
                    rep.observe(gap, side.is_some(), || {
                        Witness::new(x, out[0], m, gap, format!("head {i} {}", side.unwrap_or("worst")))
                    });
                }
            }
            rep
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(fresh(), VerificationReport::merge))
}

/// Checks `|model(x) - F0(z(x))|` against [`SoftminHeadModel::guaranteed_error`].
pub fn verify_softmin_model(model: &SoftminHeadModel, sequences: &[Sequence]) -> Result<VerificationReport> {
    for x in sequences {
        model.check_input(x)?;
    }
    let bound = model.guaranteed_error();
    let fresh = || VerificationReport::new("softmin_model", model.parameters(), bound);
    let reports = sequences
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut rep = fresh();
            for x in chunk {
                let got = model.forward(x)?;
                let want = evaluate_target(&model.task, x)?;
                let err = (got - want).abs();
                rep.observe(err, err > bound, || Witness::new(x, got, want, got - want, ""));
            }
            Ok(rep)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reports.into_iter().fold(fresh(), VerificationReport::merge))
}
