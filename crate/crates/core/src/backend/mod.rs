//! Runtime-agnostic language model contract.
//!
//! A [`Runtime`] adapter wraps one concrete model (tokenizer, forward pass,
//! gradient step). [`ModelHandle`] layers the bookkeeping every adapter
//! shares on top: state versions, checkpoints, and argument validation.

mod checkpoint;
mod handle;

use serde::{Deserialize, Serialize};

pub use checkpoint::{CheckpointRef, CheckpointStore, DirCheckpointStore, MemoryCheckpointStore};
pub use handle::ModelHandle;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("probe must contain exactly one mask placeholder, found {0}")]
    BadMask(usize),
    #[error("span is empty")]
    EmptySpan,
    #[error("span '{0}' tokenizes to zero tokens")]
    NoTokens(String),
    #[error("token '{0}' is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("checkpoint '{0}' not found")]
    CheckpointNotFound(String),
    #[error("checkpoint belongs to runtime '{expected}', handle runs '{actual}'")]
    RuntimeMismatch { expected: String, actual: String },
    #[error("checkpoint storage: {0}")]
    Storage(#[from] std::io::Error),
    #[error("{0}")]
    Unsupported(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    LeftToRight,
    SeqToSeq,
}

/// Per-token negative log-likelihoods (nats) of a gold span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanScore {
    token_nlls: Vec<f64>,
}

impl SpanScore {
    pub fn new(token_nlls: Vec<f64>) -> Result<Self, BackendError> {
        if token_nlls.is_empty() {
            return Err(BackendError::NoTokens(String::new()));
        }
        if let Some(bad) = token_nlls.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(BackendError::NonFinite(format!("token nll {bad}")));
        }
        Ok(Self { token_nlls })
    }

    pub fn token_nlls(&self) -> &[f64] {
        &self.token_nlls
    }

    pub fn token_count(&self) -> usize {
        self.token_nlls.len()
    }

    pub fn mean_nll(&self) -> f64 {
        self.token_nlls.iter().sum::<f64>() / self.token_nlls.len() as f64
    }
}

/// Which positions contribute to the training loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMask {
    /// Every token of `input_text` (left-to-right language modeling).
    AllInputTokens,
    /// Only the decoder target tokens (mask filling).
    TargetTokens,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub family: ModelFamily,
    pub input_text: String,
    pub target_text: String,
    pub loss_mask: LossMask,
}

impl TrainingInstance {
    pub fn left_to_right(text: impl Into<String>) -> Self {
        Self {
            family: ModelFamily::LeftToRight,
            input_text: text.into(),
            target_text: String::new(),
            loss_mask: LossMask::AllInputTokens,
        }
    }

    /// `input` carries a mask placeholder where `target` was removed.
    pub fn seq_to_seq(input: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            family: ModelFamily::SeqToSeq,
            input_text: input.into(),
            target_text: target.into(),
            loss_mask: LossMask::TargetTokens,
        }
    }

    pub fn check(&self) -> Result<(), BackendError> {
        match self.family {
            ModelFamily::LeftToRight if self.input_text.trim().is_empty() => {
                Err(BackendError::BadConfig("left-to-right instance has empty input".into()))
            }
            ModelFamily::SeqToSeq if self.target_text.trim().is_empty() => {
                Err(BackendError::BadConfig("seq-to-seq instance has empty target".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainScope {
    Full,
    LastLayer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: u32,
    pub scope: TrainScope,
}

/// Losses per epoch, each the mean instance loss before that epoch's updates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReceipt {
    pub epoch_losses: Vec<f64>,
    pub parameters_changed: bool,
}

/// Subset of parameters covered by a digest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamSelection {
    All,
    /// Everything except the final transformer block.
    OutsideLastLayer,
}

/// What a concrete model runtime must provide.
///
/// Scoring takes `&self`; anything that mutates parameters takes `&mut self`
/// and must report whether it changed them.
pub trait Runtime: Send {
    fn family(&self) -> ModelFamily;
    fn runtime_id(&self) -> String;
    fn tokenizer_id(&self) -> String;

    /// Token NLLs of `span` at the mask slot of `probe`. Callers have
    /// already checked the mask count and that `span` is non-empty.
    fn score_span(&self, probe: &str, span: &str) -> Result<SpanScore, BackendError>;

    fn train(&mut self, instances: &[TrainingInstance], config: &TrainConfig) -> Result<TrainReceipt, BackendError>;

    fn export_state(&self) -> Vec<u8>;
    fn import_state(&mut self, state: &[u8]) -> Result<(), BackendError>;

    /// Hex digest of the selected parameters.
    fn parameter_digest(&self, selection: ParamSelection) -> String;
}

/// Builds identical runtime replicas, one per worker.
pub trait RuntimeFactory: Send + Sync {
    fn name(&self) -> &str;
    fn build(&self) -> Result<Box<dyn Runtime>, BackendError>;
}
