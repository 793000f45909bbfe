//! Fixed-distribution scorer used as a metric oracle.
//!
//! Each next-token distribution is keyed by the previous token (`<s>` at the
//! start of the span context). Unseen keys fall back to uniform.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tokenizer::{WordTokenizer, BOS, UNK};
use crate::backend::{
    BackendError, ModelFamily, ParamSelection, Runtime, SpanScore, TrainConfig, TrainReceipt, TrainingInstance,
};
use crate::text::split_at_mask;

const SUM_TOLERANCE: f64 = 1e-9;

/// On-disk form (TOML).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub family: ModelFamily,
    pub vocab: Vec<String>,
    #[serde(default)]
    pub tables: BTreeMap<String, Vec<f64>>,
}

fn default_name() -> String {
    "table".to_string()
}

#[derive(Clone, Debug)]
pub struct TableModel {
    spec: TableSpec,
    tokenizer: WordTokenizer,
    uniform: Vec<f64>,
}

impl TableModel {
    pub fn new(spec: TableSpec) -> Result<Self, BackendError> {
        if spec.vocab.len() < 2 {
            return Err(BackendError::BadConfig(format!(
                "vocabulary needs at least 2 tokens, got {}",
                spec.vocab.len()
            )));
        }
        let k = spec.vocab.len();
        for (key, probs) in &spec.tables {
            if probs.len() != k {
                return Err(BackendError::BadConfig(format!(
                    "table '{key}' has {} entries for a vocabulary of {k}",
                    probs.len()
                )));
            }
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(BackendError::BadConfig(format!(
                    "table '{key}' has an invalid probability"
                )));
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(BackendError::BadConfig(format!("table '{key}' sums to {sum}")));
            }
        }
        let tokenizer = WordTokenizer::new(spec.vocab.clone())?;
        Ok(Self {
            uniform: vec![1.0 / k as f64; k],
            spec,
            tokenizer,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, BackendError> {
        let spec: TableSpec = toml::from_str(text).map_err(|e| BackendError::BadConfig(e.to_string()))?;
        Self::new(spec)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn spec(&self) -> &TableSpec {
        &self.spec
    }

    pub fn vocab_size(&self) -> usize {
        self.spec.vocab.len()
    }

    /// Next-token distribution after `prev`.
    pub fn distribution(&self, prev: &str) -> &[f64] {
        self.spec.tables.get(prev).map(Vec::as_slice).unwrap_or(&self.uniform)
    }

    fn nlls(&self, start: &str, tokens: &[u32]) -> Result<Vec<f64>, BackendError> {
        let mut prev = start;
        let mut out = Vec::with_capacity(tokens.len());
        for &id in tokens {
            let p = self.distribution(prev)[id as usize];
            if p <= 0.0 {
                return Err(BackendError::NonFinite(format!(
                    "token '{}' has zero probability after '{prev}'",
                    self.tokenizer.token(id)
                )));
            }
            out.push(-p.ln());
            prev = self.tokenizer.token(id);
        }
        Ok(out)
    }

    fn instance_loss(&self, inst: &TrainingInstance) -> Result<f64, BackendError> {
        let tokens = match inst.family {
            ModelFamily::LeftToRight => self.tokenizer.encode(&inst.input_text)?,
            ModelFamily::SeqToSeq => self.tokenizer.encode(&inst.target_text)?,
        };
        if tokens.is_empty() {
            return Err(BackendError::NoTokens(inst.input_text.clone()));
        }
        let nlls = self.nlls(BOS, &tokens)?;
        Ok(nlls.iter().sum::<f64>() / nlls.len() as f64)
    }
}

/// Uniform scorer over `k` tokens: `<unk>` plus `k - 1` filler words, so
/// every text tokenizes.
pub fn make_uniform_model(k: usize) -> Result<TableModel, BackendError> {
    if k < 2 {
        return Err(BackendError::BadConfig(format!("uniform model needs K >= 2, got {k}")));
    }
    let vocab = std::iter::once(UNK.to_string())
        .chain((1..k).map(|i| format!("w{i}")))
        .collect();
    TableModel::new(TableSpec {
        name: format!("uniform{k}"),
        family: ModelFamily::LeftToRight,
        vocab,
        tables: BTreeMap::new(),
    })
}

impl Runtime for TableModel {
    fn family(&self) -> ModelFamily {
        self.spec.family
    }

    fn runtime_id(&self) -> String {
        format!(
            "table:{}:{}",
            self.spec.name,
            &self.parameter_digest(ParamSelection::All)[..16]
        )
    }

    fn tokenizer_id(&self) -> String {
        format!("words:{}", self.tokenizer.digest())
    }

    fn score_span(&self, probe: &str, span: &str) -> Result<SpanScore, BackendError> {
        let (left, _) = split_at_mask(probe).ok_or(BackendError::BadMask(crate::text::mask_count(probe)))?;
        let span_ids = self.tokenizer.encode(span)?;
        if span_ids.is_empty() {
            return Err(BackendError::NoTokens(span.to_string()));
        }
        let start = match self.spec.family {
            ModelFamily::LeftToRight => {
                let left_ids = self.tokenizer.encode(left)?;
                left_ids.last().map(|&id| self.tokenizer.token(id)).unwrap_or(BOS)
            }
            ModelFamily::SeqToSeq => BOS,
        };
        SpanScore::new(self.nlls(start, &span_ids)?)
    }

    /// Tables are fixed: only no-op configurations are accepted.
    fn train(&mut self, instances: &[TrainingInstance], config: &TrainConfig) -> Result<TrainReceipt, BackendError> {
        if config.epochs == 0 {
            return Ok(TrainReceipt::default());
        }
        if config.learning_rate != 0.0 && !instances.is_empty() {
            return Err(BackendError::Unsupported("table models cannot be trained".into()));
        }
        let loss = if instances.is_empty() {
            0.0
        } else {
            let mut total = 0.0;
            for inst in instances {
                total += self.instance_loss(inst)?;
            }
            total / instances.len() as f64
        };
        Ok(TrainReceipt {
            epoch_losses: vec![loss; config.epochs as usize],
            parameters_changed: false,
        })
    }

    fn export_state(&self) -> Vec<u8> {
        serde_json::to_vec(&self.spec).expect("table spec serializes")
    }

    fn import_state(&mut self, state: &[u8]) -> Result<(), BackendError> {
        let spec: TableSpec = serde_json::from_slice(state).map_err(|e| BackendError::Runtime(e.to_string()))?;
        *self = TableModel::new(spec)?;
        Ok(())
    }

    fn parameter_digest(&self, _selection: ParamSelection) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.spec.vocab).expect("vocab serializes"));
        for (key, probs) in &self.spec.tables {
            h.update(key.as_bytes());
            for p in probs {
                h.update(p.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ModelHandle, TrainScope};

    fn ln(x: f64) -> f64 {
        x.ln()
    }

    #[test]
    fn uniform_scores() {
        let h = ModelHandle::in_memory(Box::new(make_uniform_model(8).unwrap()));
        let s = h.score_span("anything at all <MASK> trailing", "x y z").unwrap();
        assert_eq!(s.token_nlls(), &[ln(8.0), ln(8.0), ln(8.0)]);
        assert_eq!(h.score_span("anything <MASK>", "x y z").unwrap(), s);
        assert!(make_uniform_model(1).is_err());
    }

    #[test]
    fn table_probabilities_by_construction() {
        let spec = r#"
            family = "left_to_right"
            vocab = ["a", "b", "c", "d"]
            [tables]
            "<s>" = [1.0, 0.0, 0.0, 0.0]
            "a" = [0.25, 0.25, 0.25, 0.25]
            "b" = [0.0625, 0.0625, 0.0625, 0.8125]
        "#;
        let m = TableModel::from_toml_str(spec).unwrap();
        let h = ModelHandle::in_memory(Box::new(m));
        let s = h.score_span("<MASK>", "a b c").unwrap();
        assert_eq!(s.token_nlls(), &[0.0, ln(4.0), ln(16.0)]);
    }

    #[test]
    fn bad_tables_rejected() {
        let spec = r#"
            family = "left_to_right"
            vocab = ["a", "b"]
            [tables]
            "a" = [0.5, 0.6]
        "#;
        assert!(TableModel::from_toml_str(spec).is_err());
    }

    #[test]
    fn candidate_means_remove_length_effects() {
        let h = ModelHandle::in_memory(Box::new(make_uniform_model(8).unwrap()));
        let scores = h
            .score_candidates("x <MASK>", &["a".into(), "a b c".into(), "a b".into()])
            .unwrap();
        for (_, s) in scores {
            assert!((s + ln(8.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn no_op_training_only() {
        let mut m = make_uniform_model(4).unwrap();
        let inst = [TrainingInstance::left_to_right("a b")];
        let zero = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            scope: TrainScope::Full,
        };
        let r = m.train(&inst, &zero).unwrap();
        assert_eq!(r.epoch_losses.len(), 3);
        assert!(r.epoch_losses.iter().all(|l| *l == r.epoch_losses[0]));
        assert!(!r.parameters_changed);
        let real = TrainConfig {
            learning_rate: 0.1,
            ..zero
        };
        assert!(matches!(m.train(&inst, &real), Err(BackendError::Unsupported(_))));
    }
}
