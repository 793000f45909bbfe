use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::TrainScope;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMethod {
    FtFull,
    FtLastLayer,
    TrainOnTest,
    AugmentDefinition,
    AugmentRandom,
    ExternalEditor,
}

impl InjectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            InjectionMethod::FtFull => "ft_full",
            InjectionMethod::FtLastLayer => "ft_last_layer",
            InjectionMethod::TrainOnTest => "train_on_test",
            InjectionMethod::AugmentDefinition => "augment_definition",
            InjectionMethod::AugmentRandom => "augment_random",
            InjectionMethod::ExternalEditor => "external_editor",
        }
    }

    pub fn is_augmentation(self) -> bool {
        matches!(
            self,
            InjectionMethod::AugmentDefinition | InjectionMethod::AugmentRandom
        )
    }

    /// Methods driven by gradient steps, and hence by epochs and a learning rate.
    pub fn is_finetuning(self) -> bool {
        matches!(
            self,
            InjectionMethod::FtFull | InjectionMethod::FtLastLayer | InjectionMethod::TrainOnTest
        )
    }

    pub fn scope(self) -> TrainScope {
        match self {
            InjectionMethod::FtLastLayer => TrainScope::LastLayer,
            _ => TrainScope::Full,
        }
    }
}

impl fmt::Display for InjectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Named hyperparameter presets.
///
/// `main_*` are the per-dataset settings of the headline evaluation,
/// `sweep_*` the learning rates of the epoch sweep. `desk` is sized for the
/// in-tree trainable model, whose plain SGD needs far larger steps than a
/// pretrained transformer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    MainEcbd,
    MainEntityInferences,
    SweepEcbd,
    SweepEntityInferences,
    Desk,
}

impl Preset {
    pub fn learning_rate(self) -> f64 {
        match self {
            Preset::MainEcbd => 3e-6,
            Preset::MainEntityInferences => 5e-4,
            Preset::SweepEcbd => 3e-5,
            Preset::SweepEntityInferences => 5e-5,
            Preset::Desk => 0.3,
        }
    }

    pub fn epochs(self) -> u32 {
        match self {
            Preset::MainEcbd => 5,
            Preset::MainEntityInferences => 10,
            Preset::SweepEcbd | Preset::SweepEntityInferences | Preset::Desk => *SWEEP_EPOCHS.end(),
        }
    }
}

/// Epoch grid of the tradeoff sweep.
pub const SWEEP_EPOCHS: std::ops::RangeInclusive<u32> = 0..=8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    pub method: InjectionMethod,
    /// Distinguishes several configurations of the same method in one run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<u32>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub editor_plugin: Option<String>,
}

impl InjectionConfig {
    pub fn new(method: InjectionMethod) -> Self {
        Self {
            method,
            label: None,
            learning_rate: None,
            epochs: None,
            seed: 0,
            editor_plugin: None,
        }
    }

    pub fn finetune(method: InjectionMethod, learning_rate: f64, epochs: u32) -> Self {
        Self {
            learning_rate: Some(learning_rate),
            epochs: Some(epochs),
            ..Self::new(method)
        }
    }

    pub fn from_preset(method: InjectionMethod, preset: Preset) -> Self {
        Self::finetune(method, preset.learning_rate(), preset.epochs()).normalized()
    }

    pub fn editor(plugin: impl Into<String>) -> Self {
        Self {
            editor_plugin: Some(plugin.into()),
            ..Self::new(InjectionMethod::ExternalEditor)
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Same config with the epoch count replaced (used by sweeps).
    pub fn with_epochs(mut self, epochs: u32) -> Self {
        if self.method.is_finetuning() {
            self.epochs = Some(epochs);
        }
        self
    }

    /// Drop hyperparameters the method ignores.
    pub fn normalized(mut self) -> Self {
        if !self.method.is_finetuning() {
            self.learning_rate = None;
            self.epochs = None;
        }
        if self.method != InjectionMethod::ExternalEditor {
            self.editor_plugin = None;
        }
        self
    }

    pub fn display_label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.method.to_string())
    }

    pub fn check(&self) -> Result<(), String> {
        if self.method.is_finetuning() {
            match self.learning_rate {
                Some(lr) if lr.is_finite() && lr >= 0.0 => {}
                Some(lr) => return Err(format!("learning rate must be finite and non-negative, got {lr}")),
                None => return Err(format!("{} needs a learning rate", self.method)),
            }
            if self.epochs.is_none() {
                return Err(format!("{} needs an epoch count", self.method));
            }
        }
        if self.method == InjectionMethod::ExternalEditor && self.editor_plugin.is_none() {
            return Err("external_editor needs an editor_plugin name".into());
        }
        Ok(())
    }

    /// Short content hash of the normalized config.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&self.clone().normalized()).expect("config serializes");
        hex::encode(&Sha256::digest(json)[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augmentation_drops_training_hyperparameters() {
        let c = InjectionConfig::finetune(InjectionMethod::AugmentDefinition, 0.1, 3).normalized();
        assert_eq!(c.learning_rate, None);
        assert_eq!(c.epochs, None);
        assert!(c.check().is_ok());
    }

    #[test]
    fn presets() {
        let c = InjectionConfig::from_preset(InjectionMethod::FtFull, Preset::MainEcbd);
        assert_eq!((c.learning_rate, c.epochs), (Some(3e-6), Some(5)));
        let c = InjectionConfig::from_preset(InjectionMethod::FtFull, Preset::MainEntityInferences);
        assert_eq!((c.learning_rate, c.epochs), (Some(5e-4), Some(10)));
        assert_eq!(Preset::SweepEcbd.learning_rate(), 3e-5);
        assert_eq!(Preset::SweepEntityInferences.learning_rate(), 5e-5);
        assert_eq!(SWEEP_EPOCHS.count(), 9);
    }

    #[test]
    fn digest_tracks_hyperparameters() {
        let a = InjectionConfig::finetune(InjectionMethod::FtFull, 0.1, 3);
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), a.clone().with_epochs(4).digest());
    }

    #[test]
    fn finetuning_requires_hyperparameters() {
        assert!(InjectionConfig::new(InjectionMethod::FtFull).check().is_err());
        assert!(InjectionConfig::new(InjectionMethod::ExternalEditor).check().is_err());
        assert!(InjectionConfig::finetune(InjectionMethod::FtFull, -1.0, 1)
            .check()
            .is_err());
    }
}
