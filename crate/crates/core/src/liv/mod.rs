//! Compilation of backbone genomes into executable LIV stacks.
//!
//! [`compile_plan`] resolves a genome into a [`BackbonePlan`]: per-layer
//! structure, sharing wiring and the list of parameter tensors, without
//! allocating any of them. [`compile`] additionally initializes a
//! [`ParamStore`] and yields a [`CompiledBackbone`] that can run forward and
//! backward passes on a [`Tape`](crate::grad::Tape).

mod dense;
mod model;
mod ops;
mod params;
mod plan;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{PoolError, Role, Violation};
use crate::grad::{ConvMode, GradError, ScanMode};

pub use dense::{apply_dense, DENSE_ORACLE_CAP};
pub use model::{Batch, CompiledBackbone, FeatureGroupValue, Sequence};
pub use ops::{positional_features, IMPLICIT_FEATURES};
pub use params::{ParamStore, BLOB_MAGIC};
pub use plan::{
    compile_plan, BackbonePlan, BranchPlan, GroupBinding, GroupParams, GroupSource, Hyper, Init,
    LayerPlan, ParamSpec,
};

/// Run-level dimensions shared by every layer of a backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dims {
    pub width: usize,
    pub vocab: usize,
    /// Longest sequence the model accepts; also the implicit kernel length.
    pub seq_len: usize,
    pub head_dim: usize,
    /// Hidden width of memoryless units; `round(8 · width / 3)` when unset.
    pub mlp_hidden: Option<usize>,
    pub conv_mode: ConvMode,
    pub scan_mode: ScanMode,
}

impl Dims {
    pub fn desk() -> Self {
        Self {
            width: 32,
            vocab: 32,
            seq_len: 64,
            head_dim: 8,
            mlp_hidden: None,
            conv_mode: ConvMode::Direct,
            scan_mode: ScanMode::Sequential,
        }
    }

    /// 125M-scale backbone dimensions.
    pub fn reference() -> Self {
        Self { width: 768, vocab: 32_000, seq_len: 4096, head_dim: 64, ..Self::desk() }
    }

    pub fn hidden(&self) -> usize {
        self.mlp_hidden.unwrap_or_else(|| ((8 * self.width) as f64 / 3.0).round() as usize)
    }
}

impl Default for Dims {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompileError {
    #[error("genome is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidGenome(Vec<Violation>),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("dimension error: {0}")]
    Dims(String),
    #[error("gene {consumer} cannot take group {role} from gene {producer}: {producer_channels} channels, expected {consumer_channels}")]
    IncompatibleSharing {
        producer: usize,
        consumer: usize,
        role: Role,
        producer_channels: usize,
        consumer_channels: usize,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LivError {
    #[error("token {token} at position {position} is outside the vocabulary of {vocab}")]
    Token { position: usize, token: usize, vocab: usize },
    #[error("sequence of length {len} exceeds the compiled maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("non-finite values in the output of layer {layer}")]
    NonFinite { layer: usize },
    #[error("dense oracle refuses sequence length {seq_len} above {cap}")]
    OracleCap { seq_len: usize, cap: usize },
    #[error("layer {0} does not exist")]
    NoSuchLayer(usize),
    #[error("missing feature group {role} for branch {branch}")]
    MissingGroup { role: Role, branch: usize },
    #[error("parameter blob: {0}")]
    Blob(String),
    #[error(transparent)]
    Grad(#[from] GradError),
}
