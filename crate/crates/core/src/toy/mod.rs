//! In-tree runtimes: a fixed-table scorer for metric oracles and a tiny
//! trainable model for desk-scale propagation experiments.

mod synthetic;
mod table;
mod tiny;
mod tokenizer;

pub use synthetic::SyntheticSuite;
pub use table::{make_uniform_model, TableModel, TableSpec};
pub use tiny::{gradient_check, GradientCheck, TinyConfig, TinyTrainableModel, FD_FLOOR, FD_STEP};
pub use tokenizer::{split_pieces, WordTokenizer, BOS, SENTINEL, UNK};

use crate::backend::{BackendError, Runtime, RuntimeFactory};

pub struct TableFactory {
    name: String,
    model: TableModel,
}

impl TableFactory {
    pub fn new(name: impl Into<String>, model: TableModel) -> Self {
        Self {
            name: name.into(),
            model,
        }
    }
}

impl RuntimeFactory for TableFactory {
    fn name(&self) -> &str {
        &self.name
    }

    fn build(&self) -> Result<Box<dyn Runtime>, BackendError> {
        Ok(Box::new(self.model.clone()))
    }
}

pub struct TinyFactory {
    config: TinyConfig,
    tokenizer: WordTokenizer,
}

impl TinyFactory {
    pub fn new(config: TinyConfig, tokenizer: WordTokenizer) -> Self {
        Self { config, tokenizer }
    }
}

impl RuntimeFactory for TinyFactory {
    fn name(&self) -> &str {
        "tiny"
    }

    fn build(&self) -> Result<Box<dyn Runtime>, BackendError> {
        Ok(Box::new(TinyTrainableModel::new(self.config, self.tokenizer.clone())?))
    }
}
