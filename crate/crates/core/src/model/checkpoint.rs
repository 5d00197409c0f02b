// SPDX-License-Identifier: Apache-2.0

//! Checkpoints: the model config plus a flat list of named tensors, as JSON.
//! Values round-trip bit for bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, TransformerParams};
use crate::error::{invalid, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_params(params: &TransformerParams) -> Self {
        Self {
            config: params.config,
            tensors: params
                .tensors()
                .into_iter()
                .map(|(name, m)| NamedTensor {
                    name,
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_params(self) -> Result<TransformerParams> {
        let mut params = TransformerParams::zeros(self.config)?;
        let expected = params
            .tensors()
            .into_iter()
            .map(|(n, m)| (n, m.shape()))
            .collect::<Vec<_>>();
        if expected.len() != self.tensors.len() {
            return Err(invalid!(
                "checkpoint has {} tensors, config needs {}",
                self.tensors.len(),
                expected.len()
            ));
        }
        for ((slot, (name, shape)), t) in params.tensors_mut().into_iter().zip(expected).zip(self.tensors) {
            if t.name != name || (t.rows, t.cols) != shape {
                return Err(invalid!(
                    "checkpoint tensor {} {:?} where {} {:?} was expected",
                    t.name,
                    (t.rows, t.cols),
                    name,
                    shape
                ));
            }
            *slot = Matrix::from_vec(t.rows, t.cols, t.data)?;
        }
        Ok(params)
    }
}

pub fn save(params: &TransformerParams, w: impl Write) -> Result<()> {
    serde_json::to_writer(w, &Checkpoint::from_params(params))?;
    Ok(())
}

pub fn load(r: impl Read) -> Result<TransformerParams> {
    let ck: Checkpoint = serde_json::from_reader(r)?;
    ck.into_params()
}
