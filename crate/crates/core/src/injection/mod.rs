//! Knowledge injection: `update(θ, e, d_e)` by fine-tuning, in-context
//! augmentation, or an external editor plugin.

mod config;
mod spans;
mod sro;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{InjectionConfig, InjectionMethod, Preset, SWEEP_EPOCHS};
pub use spans::{
    build_training_instance, sample_span, train_on_test_instance, valid_spans, WordSpan, MAX_SPAN_WORDS,
    MIN_SPAN_WORDS, REJECTION_ATTEMPTS,
};
pub use sro::{convert_to_sro, FilterReason, SroConverter, SroOutcome, SroTriple, PLACEHOLDER};

use crate::backend::{BackendError, CheckpointRef, ModelHandle, Runtime, TrainConfig, TrainReceipt, TrainingInstance};
use crate::corpus::{gold_in_definition, Corpus, CorpusError, EntitySpec, ProbeExample};
use crate::text::{normalize_whitespace, MASK};

#[derive(Debug, thiserror::Error)]
pub enum InjectionError {
    #[error("no maskable span outside the entity mention in the definition of '{0}'")]
    NoValidSpan(String),
    #[error("sentence must contain exactly one mask placeholder, found {0}")]
    MalformedMask(usize),
    #[error("no other entity to draw a random definition from (excluding '{0}')")]
    NoOtherEntity(String),
    #[error("editor plugin '{0}' is not registered")]
    PluginNotFound(String),
    #[error("editor plugin '{0}' did not apply the edit")]
    EditNotApplied(String),
    #[error("handle is not at the base checkpoint '{0}'")]
    NotAtBase(String),
    #[error("invalid injection config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Definition, one space, then the probe. An empty definition leaves the
/// probe as is.
pub fn augment_probe(probe: &ProbeExample, definition: &str) -> String {
    if definition.trim().is_empty() {
        probe.probe.clone()
    } else {
        format!("{definition} {}", probe.probe)
    }
}

/// Definition of a uniformly chosen entity other than `exclude`.
pub fn sample_random_definition(corpus: &Corpus, exclude: &str, seed: u64) -> Result<String, InjectionError> {
    let others: Vec<&EntitySpec> = corpus.entities.values().filter(|e| e.entity_id != exclude).collect();
    if others.is_empty() {
        return Err(InjectionError::NoOtherEntity(exclude.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(others[rng.gen_range(0..others.len())].definition.clone())
}

/// Acknowledgment returned by an editor plugin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditorAck {
    pub applied: bool,
    #[serde(default)]
    pub note: Option<String>,
}

/// A parameter editor implemented outside this crate (hypernetwork or
/// rank-one editors). It receives the entity, its definition and, when the
/// gold span can be located in the definition, the S-R-O form of it.
pub trait ExternalEditor: Send + Sync {
    fn name(&self) -> &str;
    fn apply(
        &self,
        runtime: &mut dyn Runtime,
        entity: &EntitySpec,
        definition: &str,
        sro: Option<&SroTriple>,
    ) -> Result<EditorAck, BackendError>;
}

#[derive(Clone, Default)]
pub struct EditorRegistry {
    editors: BTreeMap<String, Arc<dyn ExternalEditor>>,
}

impl EditorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, editor: Arc<dyn ExternalEditor>) {
        self.editors.insert(editor.name().to_string(), editor);
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn ExternalEditor>> {
        self.editors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.editors.keys().map(String::as_str)
    }
}

/// Shared inputs of every injection in a run.
pub struct InjectionContext<'a> {
    /// Source of random definitions.
    pub corpus: &'a Corpus,
    pub editors: &'a EditorRegistry,
    pub sro: &'a SroConverter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateReceipt {
    pub method: InjectionMethod,
    pub parameters_changed: bool,
    pub checkpoint_before: CheckpointRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_receipt: Option<TrainReceipt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_instance: Option<TrainingInstance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented_probe: Option<String>,
}

/// S-R-O triple of the definition with the gold span as object, if the gold
/// span occurs in it.
pub fn definition_triple(
    converter: &SroConverter,
    ent: &EntitySpec,
    probe: &ProbeExample,
) -> Result<Option<SroTriple>, InjectionError> {
    if !gold_in_definition(probe, ent) {
        return Ok(None);
    }
    let def = normalize_whitespace(&ent.definition);
    let masked = def.replacen(&normalize_whitespace(&probe.gold_span), MASK, 1);
    Ok(match converter.convert(ent, &masked, &probe.gold_span)? {
        SroOutcome::Triple(t) => Some(t),
        SroOutcome::Filtered(_) => None,
    })
}

/// Apply one injection to a handle sitting at `base`.
///
/// `seed` drives every random choice (span sampling, random definitions).
pub fn inject(
    handle: &mut ModelHandle,
    base: &CheckpointRef,
    ent: &EntitySpec,
    probe: &ProbeExample,
    config: &InjectionConfig,
    ctx: &InjectionContext<'_>,
    seed: u64,
) -> Result<UpdateReceipt, InjectionError> {
    config.check().map_err(InjectionError::BadConfig)?;
    if !handle.is_at(base) {
        return Err(InjectionError::NotAtBase(base.checkpoint_id.clone()));
    }
    let checkpoint_before = handle.ensure_checkpoint(base)?;
    let mut receipt = UpdateReceipt {
        method: config.method,
        parameters_changed: false,
        checkpoint_before,
        train_receipt: None,
        training_instance: None,
        augmented_probe: None,
    };

    match config.method {
        InjectionMethod::FtFull | InjectionMethod::FtLastLayer | InjectionMethod::TrainOnTest => {
            let instance = if config.method == InjectionMethod::TrainOnTest {
                train_on_test_instance(probe, handle.family())
            } else {
                build_training_instance(ent, handle.family(), seed)?
            };
            let train = TrainConfig {
                learning_rate: config.learning_rate.unwrap_or(0.0),
                epochs: config.epochs.unwrap_or(0),
                scope: config.method.scope(),
            };
            let tr = handle.finetune(std::slice::from_ref(&instance), &train)?;
            receipt.parameters_changed = tr.parameters_changed;
            receipt.train_receipt = Some(tr);
            receipt.training_instance = Some(instance);
        }
        InjectionMethod::AugmentDefinition => {
            receipt.augmented_probe = Some(augment_probe(probe, &ent.definition));
        }
        InjectionMethod::AugmentRandom => {
            let def = sample_random_definition(ctx.corpus, &ent.entity_id, seed)?;
            receipt.augmented_probe = Some(augment_probe(probe, &def));
        }
        InjectionMethod::ExternalEditor => {
            let name = config.editor_plugin.as_deref().unwrap_or_default();
            let editor = ctx
                .editors
                .get(name)
                .ok_or_else(|| InjectionError::PluginNotFound(name.to_string()))?
                .clone();
            let triple = definition_triple(ctx.sro, ent, probe)?;
            let ack = handle.apply_external(|rt| editor.apply(rt, ent, &ent.definition, triple.as_ref()))?;
            receipt.parameters_changed = true;
            if !ack.applied {
                return Err(InjectionError::EditNotApplied(name.to_string()));
            }
        }
    }
    Ok(receipt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ModelFamily, ParamSelection};
    use crate::corpus::{CorpusKind, SpanKind};
    use crate::toy::{make_uniform_model, TinyConfig, TinyTrainableModel, WordTokenizer};

    const DRACULA_DEF: &str = "Dracula is a drama horror television serial developed by Mark Gatiss and Steven Moffat, based on the 1897 novel of the same name by Bram Stoker.";

    fn dracula_probe() -> ProbeExample {
        ProbeExample {
            example_id: "d1".into(),
            entity_id: "dracula".into(),
            probe: "Dracula makes me feel <MASK>.".into(),
            gold_span: "scared".into(),
            candidates: None,
            span_kind: SpanKind::Authored,
            inference_kind: None,
        }
    }

    fn corpus() -> Corpus {
        let nana = EntitySpec::new("nana", "Nana", "Nana was a hurricane that hit Belize.");
        let probe = ProbeExample {
            example_id: "n1".into(),
            entity_id: "nana".into(),
            probe: "Nana struck <MASK>.".into(),
            gold_span: "Belize".into(),
            ..dracula_probe()
        };
        Corpus::from_parts(
            CorpusKind::OpenCloze,
            [EntitySpec::new("dracula", "Dracula", DRACULA_DEF), nana],
            vec![dracula_probe(), probe],
        )
        .unwrap()
    }

    #[test]
    fn augmentation_composition() {
        let p = dracula_probe();
        let out = augment_probe(&p, DRACULA_DEF);
        assert_eq!(out, format!("{DRACULA_DEF} Dracula makes me feel <MASK>."));
        assert_eq!(crate::text::mask_count(&out), 1);
        assert_eq!(augment_probe(&p, ""), p.probe);
    }

    #[test]
    fn random_definitions() {
        let c = corpus();
        for seed in 0..20 {
            assert_eq!(
                sample_random_definition(&c, "dracula", seed).unwrap(),
                "Nana was a hurricane that hit Belize."
            );
        }
        let single = c.retain_examples(|e, _| e.entity_id == "nana");
        assert!(matches!(
            sample_random_definition(&single, "nana", 0),
            Err(InjectionError::NoOtherEntity(_))
        ));
    }

    fn tiny_handle(c: &Corpus) -> ModelHandle {
        let texts = c
            .entities
            .values()
            .map(|e| e.definition.as_str())
            .chain(c.examples.iter().flat_map(|e| [e.probe.as_str(), e.gold_span.as_str()]));
        let tok = WordTokenizer::from_texts(texts);
        ModelHandle::in_memory(Box::new(
            TinyTrainableModel::new(TinyConfig::new(ModelFamily::LeftToRight), tok).unwrap(),
        ))
    }

    #[test]
    fn zero_epochs_change_nothing() {
        let c = corpus();
        let mut h = tiny_handle(&c);
        let base = h.snapshot().unwrap();
        let editors = EditorRegistry::new();
        let sro = SroConverter::default();
        let ctx = InjectionContext {
            corpus: &c,
            editors: &editors,
            sro: &sro,
        };
        let p = dracula_probe();
        let before = h.score_span(&p.probe, &p.gold_span).unwrap();
        let cfg = InjectionConfig::finetune(InjectionMethod::FtFull, 0.5, 0);
        let r = inject(&mut h, &base, c.entity_of(&p), &p, &cfg, &ctx, 1).unwrap();
        assert!(!r.parameters_changed);
        assert_eq!(h.score_span(&p.probe, &p.gold_span).unwrap(), before);
        assert!(h.is_at(&base));
    }

    #[test]
    fn train_on_test_lowers_target_perplexity() {
        let c = corpus();
        let mut h = tiny_handle(&c);
        let base = h.snapshot().unwrap();
        let editors = EditorRegistry::new();
        let sro = SroConverter::default();
        let ctx = InjectionContext {
            corpus: &c,
            editors: &editors,
            sro: &sro,
        };
        let p = dracula_probe();
        let pre = h.score_span(&p.probe, &p.gold_span).unwrap().mean_nll();
        let cfg = InjectionConfig::finetune(InjectionMethod::TrainOnTest, 0.5, 5);
        let r = inject(&mut h, &base, c.entity_of(&p), &p, &cfg, &ctx, 1).unwrap();
        assert!(r.parameters_changed);
        let post = h.score_span(&p.probe, &p.gold_span).unwrap().mean_nll();
        assert!(post < pre, "{post} !< {pre}");
        assert!(matches!(
            inject(&mut h, &base, c.entity_of(&p), &p, &cfg, &ctx, 1),
            Err(InjectionError::NotAtBase(_))
        ));
        h.restore(&base).unwrap();
        assert_eq!(h.score_span(&p.probe, &p.gold_span).unwrap().mean_nll(), pre);
    }

    #[test]
    fn augmentation_leaves_parameters_alone() {
        let c = corpus();
        let mut h = ModelHandle::in_memory(Box::new(make_uniform_model(8).unwrap()));
        let base = h.snapshot().unwrap();
        let version = h.state_version();
        let digest = h.parameter_digest(ParamSelection::All);
        let editors = EditorRegistry::new();
        let sro = SroConverter::default();
        let ctx = InjectionContext {
            corpus: &c,
            editors: &editors,
            sro: &sro,
        };
        let p = dracula_probe();
        for method in [InjectionMethod::AugmentDefinition, InjectionMethod::AugmentRandom] {
            let r = inject(
                &mut h,
                &base,
                c.entity_of(&p),
                &p,
                &InjectionConfig::new(method),
                &ctx,
                3,
            )
            .unwrap();
            assert!(!r.parameters_changed);
            assert!(r.augmented_probe.unwrap().ends_with(&p.probe));
        }
        assert_eq!(h.state_version(), version);
        assert_eq!(h.parameter_digest(ParamSelection::All), digest);
    }

    #[test]
    fn unknown_plugin() {
        let c = corpus();
        let mut h = ModelHandle::in_memory(Box::new(make_uniform_model(4).unwrap()));
        let base = h.snapshot().unwrap();
        let editors = EditorRegistry::new();
        let sro = SroConverter::default();
        let ctx = InjectionContext {
            corpus: &c,
            editors: &editors,
            sro: &sro,
        };
        let p = dracula_probe();
        let err = inject(
            &mut h,
            &base,
            c.entity_of(&p),
            &p,
            &InjectionConfig::editor("rome"),
            &ctx,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, InjectionError::PluginNotFound(n) if n == "rome"));
        assert!(h.is_at(&base));
    }

    #[test]
    fn definition_triple_uses_gold_as_object() {
        let c = corpus();
        let nana = &c.examples[1];
        let t = definition_triple(&SroConverter::default(), c.entity_of(nana), nana)
            .unwrap()
            .unwrap();
        assert_eq!(t.relation, "{} was a hurricane that hit");
        assert_eq!(t.object, "Belize");
        assert!(
            definition_triple(&SroConverter::default(), c.entity_of(&c.examples[0]), &c.examples[0])
                .unwrap()
                .is_none()
        );
    }
}
