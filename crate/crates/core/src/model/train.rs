// SPDX-License-Identifier: Apache-2.0

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::batch::BatchWorkspace;
use super::params::{ModelConfig, TransformerParams};
use crate::analysis::nmse;
use crate::error::{invalid, Result};
use crate::numerics::{rng, AdamConfig, AdamState};
use crate::tasks::{Dataset, Record, Sequence};

const INIT_STREAM: u64 = 0x696e6974;
const SHUFFLE_STREAM: u64 = 0x73687566;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay from the base rate to zero over all steps.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub schedule: LrSchedule,
    /// A batch loss above this (or non-finite) ends the run as diverged.
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
}

fn default_divergence() -> f64 {
    1e6
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            seed: 0,
            adam: AdamConfig::default(),
            schedule: LrSchedule::Constant,
            divergence_threshold: default_divergence(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
}

/// One training outcome. NMSE fields are `None` for diverged runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub h: usize,
    #[serde(rename = "T")]
    pub seq_len: usize,
    #[serde(rename = "N")]
    pub hidden: usize,
    pub head_dim: usize,
    pub seed: u64,
    pub data_seed: u64,
    pub parameter_count: usize,
    pub attention_parameter_count: usize,
    pub train_nmse: Option<f64>,
    pub val_nmse: Option<f64>,
    pub epochs_completed: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub wall_seconds: f64,
    pub status: RunStatus,
}

impl RunRecord {
    /// Equality on everything except wall time.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        let mut a = self.clone();
        a.wall_seconds = other.wall_seconds;
        a == *other
    }
}

pub struct TrainOutcome {
    pub record: RunRecord,
    /// Final parameters; `None` when the run diverged.
    pub params: Option<TransformerParams>,
}

/// Predictions of `params` on `inputs`, evaluated in chunks of `chunk`.
pub fn predict(params: &TransformerParams, inputs: &[&Sequence], chunk: usize) -> Result<Vec<f64>> {
    let chunk = chunk.max(1);
    let mut out = Vec::with_capacity(inputs.len());
    let mut ws: Option<BatchWorkspace> = None;
    for part in inputs.chunks(chunk) {
        if ws.as_ref().is_none_or(|w| w.batch() != part.len()) {
            ws = Some(BatchWorkspace::new(params, part.len()));
        }
        out.extend_from_slice(ws.as_mut().expect("set above").forward(params, part)?);
    }
    Ok(out)
}

fn split_nmse(params: &TransformerParams, records: &[Record], chunk: usize) -> Result<Option<f64>> {
    let inputs: Vec<&Sequence> = records.iter().map(|r| &r.tokens).collect();
    let labels: Vec<f64> = records.iter().map(|r| r.label).collect();
    let pred = predict(params, &inputs, chunk)?;
    if pred.iter().any(|p| !p.is_finite()) {
        return Ok(None);
    }
    Ok(Some(nmse(&pred, &labels)?))
}

/// Trains one model with Adam on mean squared error.
///
/// Initialization draws from `(seed, h, T, N)` and the batch order from an
/// independent stream of the same key. The output bias starts at the mean
/// training label.
pub fn train(model: ModelConfig, config: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    let start = Instant::now();
    model.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(invalid!("train and validation splits must be nonempty"));
    }
    if config.batch_size == 0 {
        return Err(invalid!("batch size must be positive"));
    }
    if data.meta.seq_len != model.seq_len || data.meta.input_dim != model.input_dim {
        return Err(invalid!(
            "dataset shape (T={}, d={}) does not match model (T={}, d={})",
            data.meta.seq_len,
            data.meta.input_dim,
            model.seq_len,
            model.input_dim
        ));
    }

    let key = [model.heads as u64, model.seq_len as u64, model.hidden as u64];
    let mut init_rng = rng::stream(config.seed, &[INIT_STREAM, key[0], key[1], key[2]]);
    let mut order_rng = rng::stream(config.seed, &[SHUFFLE_STREAM, key[0], key[1], key[2]]);
    let mut params = TransformerParams::init(model, &mut init_rng)?;
    let mean_label = data.train.iter().map(|r| r.label).sum::<f64>() / data.train.len() as f64;
    params.ffn_b2[(0, 0)] = mean_label;

    let mut grads = TransformerParams::zeros(model)?;
    let mut adam = AdamState::new(config.adam, &params.shapes());
    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let mut full = BatchWorkspace::new(&params, config.batch_size.min(n));
    let mut tail: Option<BatchWorkspace> = None;
    let mut order: Vec<usize> = (0..n).collect();
    let mut diverged = false;
    let mut epochs_completed = 0;

    'epochs: for _ in 0..config.epochs {
        order.shuffle(&mut order_rng);
        for idx in order.chunks(config.batch_size) {
            let inputs: Vec<&Sequence> = idx.iter().map(|&k| &data.train[k].tokens).collect();
            let labels: Vec<f64> = idx.iter().map(|&k| data.train[k].label).collect();
            let ws = if idx.len() == full.batch() {
                &mut full
            } else {
                if tail.as_ref().is_none_or(|w| w.batch() != idx.len()) {
                    tail = Some(BatchWorkspace::new(&params, idx.len()));
                }
                tail.as_mut().expect("set above")
            };
            let loss = ws.loss_and_grad(&params, &inputs, &labels, &mut grads)?;
            if !loss.is_finite() || loss > config.divergence_threshold {
                diverged = true;
                break 'epochs;
            }
            let lr = match config.schedule {
                LrSchedule::Constant => config.adam.learning_rate,
                LrSchedule::Cosine => {
                    let frac = adam.step_count() as f64 / total_steps as f64;
                    0.5 * config.adam.learning_rate * (1.0 + (std::f64::consts::PI * frac).cos())
                }
            };
            let g: Vec<&_> = grads.tensors().into_iter().map(|(_, m)| m).collect();
            adam.step_with_lr(&mut params.tensors_mut(), &g, lr)?;
        }
        epochs_completed += 1;
    }

    let chunk = config.batch_size.max(256);
    let (train_nmse, val_nmse) = if diverged || !params.is_finite() {
        (None, None)
    } else {
        (
            split_nmse(&params, &data.train, chunk)?,
            split_nmse(&params, &data.val, chunk)?,
        )
    };
    let ok = train_nmse.is_some() && val_nmse.is_some();
    let record = RunRecord {
        h: model.heads,
        seq_len: model.seq_len,
        hidden: model.hidden,
        head_dim: model.head_dim,
        seed: config.seed,
        data_seed: data.meta.seed,
        parameter_count: params.parameter_count(),
        attention_parameter_count: params.attention_parameter_count(),
        train_nmse: if ok { train_nmse } else { None },
        val_nmse: if ok { val_nmse } else { None },
        epochs_completed,
        epochs: config.epochs,
        batch_size: config.batch_size,
        learning_rate: config.adam.learning_rate,
        wall_seconds: start.elapsed().as_secs_f64(),
        status: if ok { RunStatus::Ok } else { RunStatus::Diverged },
    };
    if !ok {
        log::warn!(
            "run h={} T={} N={} seed={} diverged",
            model.heads,
            model.seq_len,
            model.hidden,
            config.seed
        );
    }
    Ok(TrainOutcome {
        record,
        params: ok.then_some(params),
    })
}
