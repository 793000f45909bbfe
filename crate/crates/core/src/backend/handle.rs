use std::sync::Arc;

use super::{
    BackendError, CheckpointRef, CheckpointStore, MemoryCheckpointStore, ModelFamily, ParamSelection, Runtime,
    SpanScore, TrainConfig, TrainReceipt, TrainingInstance,
};
use crate::text::mask_count;

/// A single-writer handle over one model replica.
///
/// `state_version` increases on every parameter mutation and on every
/// restore; scoring never touches it.
pub struct ModelHandle {
    runtime: Box<dyn Runtime>,
    store: Arc<dyn CheckpointStore>,
    label: String,
    state_version: u64,
    next_checkpoint: u64,
    // Checkpoint whose parameters the runtime currently holds, if any.
    in_sync_with: Option<String>,
}

impl ModelHandle {
    pub fn new(runtime: Box<dyn Runtime>, store: Arc<dyn CheckpointStore>, label: impl Into<String>) -> Self {
        Self {
            runtime,
            store,
            label: label.into(),
            state_version: 0,
            next_checkpoint: 0,
            in_sync_with: None,
        }
    }

    /// Handle backed by an in-memory checkpoint store.
    pub fn in_memory(runtime: Box<dyn Runtime>) -> Self {
        Self::new(runtime, Arc::new(MemoryCheckpointStore::new()), "mem")
    }

    pub fn family(&self) -> ModelFamily {
        self.runtime.family()
    }

    pub fn runtime_id(&self) -> String {
        self.runtime.runtime_id()
    }

    pub fn tokenizer_id(&self) -> String {
        self.runtime.tokenizer_id()
    }

    pub fn state_version(&self) -> u64 {
        self.state_version
    }

    pub fn runtime(&self) -> &dyn Runtime {
        self.runtime.as_ref()
    }

    /// True when the parameters equal those captured by `ckpt`.
    pub fn is_at(&self, ckpt: &CheckpointRef) -> bool {
        self.in_sync_with.as_deref() == Some(ckpt.checkpoint_id.as_str())
    }

    pub fn score_span(&self, probe: &str, span: &str) -> Result<SpanScore, BackendError> {
        let masks = mask_count(probe);
        if masks != 1 {
            return Err(BackendError::BadMask(masks));
        }
        if span.trim().is_empty() {
            return Err(BackendError::EmptySpan);
        }
        self.runtime.score_span(probe, span)
    }

    /// Mean per-token log-probability of each candidate at the mask slot,
    /// in input order.
    pub fn score_candidates(&self, probe: &str, candidates: &[String]) -> Result<Vec<(String, f64)>, BackendError> {
        if candidates.is_empty() {
            return Err(BackendError::BadConfig("no candidates to score".into()));
        }
        candidates
            .iter()
            .map(|c| Ok((c.clone(), -self.score_span(probe, c)?.mean_nll())))
            .collect()
    }

    pub fn snapshot(&mut self) -> Result<CheckpointRef, BackendError> {
        let checkpoint_id = format!("{}-{}", self.label, self.next_checkpoint);
        self.store.put(&checkpoint_id, self.runtime.export_state())?;
        self.next_checkpoint += 1;
        self.in_sync_with = Some(checkpoint_id.clone());
        Ok(CheckpointRef {
            checkpoint_id,
            captured_state_version: self.state_version,
            runtime_id: self.runtime.runtime_id(),
        })
    }

    /// The checkpoint the handle is currently in sync with, taking a new
    /// snapshot only when the parameters have moved since the last one.
    pub fn ensure_checkpoint(&mut self, known: &CheckpointRef) -> Result<CheckpointRef, BackendError> {
        if self.is_at(known) {
            Ok(known.clone())
        } else {
            self.snapshot()
        }
    }

    pub fn restore(&mut self, ckpt: &CheckpointRef) -> Result<(), BackendError> {
        let actual = self.runtime.runtime_id();
        if ckpt.runtime_id != actual {
            return Err(BackendError::RuntimeMismatch {
                expected: ckpt.runtime_id.clone(),
                actual,
            });
        }
        let state = self.store.get(&ckpt.checkpoint_id)?;
        self.runtime.import_state(&state)?;
        self.state_version += 1;
        self.in_sync_with = Some(ckpt.checkpoint_id.clone());
        Ok(())
    }

    pub fn finetune(
        &mut self,
        instances: &[TrainingInstance],
        config: &TrainConfig,
    ) -> Result<TrainReceipt, BackendError> {
        if !(config.learning_rate.is_finite() && config.learning_rate >= 0.0) {
            return Err(BackendError::BadConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                config.learning_rate
            )));
        }
        for inst in instances {
            inst.check()?;
        }
        let result = self.runtime.train(instances, config);
        match &result {
            Ok(receipt) if receipt.parameters_changed => self.mark_mutated(),
            Ok(_) => {}
            // A failed step may have left the parameters half-updated.
            Err(_) => self.mark_mutated(),
        }
        result
    }

    /// Hand the runtime to an external editor. The handle is treated as
    /// mutated afterwards regardless of what the editor did.
    pub fn apply_external<T>(
        &mut self,
        edit: impl FnOnce(&mut dyn Runtime) -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let out = edit(self.runtime.as_mut());
        self.mark_mutated();
        out
    }

    pub fn parameter_digest(&self, selection: ParamSelection) -> String {
        self.runtime.parameter_digest(selection)
    }

    fn mark_mutated(&mut self) {
        self.state_version += 1;
        self.in_sync_with = None;
    }
}
