// SPDX-License-Identifier: Apache-2.0

use std::io;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("rejected input: {0}")]
    InvalidInput(String),

    /// An object was used before it reached the required state.
    #[error("invalid state: {0}")]
    State(String),

    /// A constructive builder could not satisfy one of its inequalities.
    #[error("construction failed: {0}")]
    Construction(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidInput(format!($($arg)*))
    };
}

pub(crate) use invalid;
