use std::sync::Arc;

use ekp_core::backend::{
    BackendError, CheckpointStore, DirCheckpointStore, ModelFamily, ModelHandle, ParamSelection, Runtime, TrainConfig,
    TrainScope, TrainingInstance,
};
use ekp_core::corpus::{Corpus, CorpusKind};
use ekp_core::injection::{inject, EditorRegistry, InjectionConfig, InjectionContext, InjectionMethod, SroConverter};
use ekp_core::toy::{make_uniform_model, SyntheticSuite, TableModel, TinyConfig, TinyTrainableModel, WordTokenizer};

fn suite(kind: CorpusKind) -> Corpus {
    SyntheticSuite::new(kind, 7, 11).generate()
}

fn tiny(c: &Corpus, family: ModelFamily, init_seed: u64) -> TinyTrainableModel {
    let texts = c
        .entities
        .values()
        .map(|e| e.definition.as_str())
        .chain(c.examples.iter().flat_map(|e| [e.probe.as_str(), e.gold_span.as_str()]));
    let mut cfg = TinyConfig::new(family);
    cfg.init_seed = init_seed;
    TinyTrainableModel::new(cfg, WordTokenizer::from_texts(texts)).unwrap()
}

fn scores(h: &ModelHandle, c: &Corpus) -> Vec<u64> {
    c.examples
        .iter()
        .take(20)
        .flat_map(|ex| h.score_span(&ex.probe, &ex.gold_span).unwrap().token_nlls().to_vec())
        .map(f64::to_bits)
        .collect()
}

#[test]
fn restore_reproduces_scores_bitwise_for_both_families() {
    let c = suite(CorpusKind::OpenCloze);
    let editors = EditorRegistry::new();
    let sro = SroConverter::default();
    let ctx = InjectionContext {
        corpus: &c,
        editors: &editors,
        sro: &sro,
    };
    for family in [ModelFamily::LeftToRight, ModelFamily::SeqToSeq] {
        let mut h = ModelHandle::in_memory(Box::new(tiny(&c, family, 5)));
        let base = h.snapshot().unwrap();
        let before = scores(&h, &c);
        let v0 = h.state_version();
        for (i, ex) in c.examples.iter().take(6).enumerate() {
            let method = [
                InjectionMethod::FtFull,
                InjectionMethod::FtLastLayer,
                InjectionMethod::TrainOnTest,
            ][i % 3];
            let cfg = InjectionConfig::finetune(method, 0.3, 3);
            let r = inject(&mut h, &base, c.entity_of(ex), ex, &cfg, &ctx, i as u64).unwrap();
            assert!(r.parameters_changed);
            assert!(!h.is_at(&base));
            assert_ne!(scores(&h, &c), before);
            h.restore(&base).unwrap();
            assert!(h.is_at(&base));
            assert_eq!(scores(&h, &c), before);
        }
        assert!(h.state_version() > v0);
    }
}

#[test]
fn scoring_does_not_bump_the_state_version() {
    let c = suite(CorpusKind::OpenCloze);
    let h = ModelHandle::in_memory(Box::new(tiny(&c, ModelFamily::LeftToRight, 0)));
    let v = h.state_version();
    scores(&h, &c);
    assert_eq!(h.state_version(), v);
}

#[test]
fn inject_refuses_a_handle_away_from_base() {
    let c = suite(CorpusKind::OpenCloze);
    let editors = EditorRegistry::new();
    let sro = SroConverter::default();
    let ctx = InjectionContext {
        corpus: &c,
        editors: &editors,
        sro: &sro,
    };
    let mut h = ModelHandle::in_memory(Box::new(tiny(&c, ModelFamily::LeftToRight, 0)));
    let base = h.snapshot().unwrap();
    let ex = &c.examples[0];
    let cfg = InjectionConfig::finetune(InjectionMethod::FtFull, 0.3, 1);
    inject(&mut h, &base, c.entity_of(ex), ex, &cfg, &ctx, 0).unwrap();
    assert!(inject(&mut h, &base, c.entity_of(ex), ex, &cfg, &ctx, 0).is_err());
}

#[test]
fn last_layer_training_freezes_everything_else() {
    let c = suite(CorpusKind::OpenCloze);
    for family in [ModelFamily::LeftToRight, ModelFamily::SeqToSeq] {
        let mut m = tiny(&c, family, 2);
        let frozen = m.parameter_digest(ParamSelection::OutsideLastLayer);
        let inst = match family {
            ModelFamily::LeftToRight => {
                TrainingInstance::left_to_right(c.entities.values().next().unwrap().definition.clone())
            }
            ModelFamily::SeqToSeq => {
                TrainingInstance::seq_to_seq(c.examples[0].probe.clone(), c.examples[0].gold_span.clone())
            }
        };
        let cfg = TrainConfig {
            learning_rate: 0.3,
            epochs: 5,
            scope: TrainScope::LastLayer,
        };
        assert!(m.train(&[inst], &cfg).unwrap().parameters_changed);
        assert_eq!(m.parameter_digest(ParamSelection::OutsideLastLayer), frozen);
    }
}

#[test]
fn restore_across_runtimes_is_rejected() {
    let c = suite(CorpusKind::OpenCloze);
    let store: Arc<dyn CheckpointStore> = Arc::new(ekp_core::backend::MemoryCheckpointStore::new());
    let mut a = ModelHandle::new(Box::new(tiny(&c, ModelFamily::LeftToRight, 0)), store.clone(), "a");
    let mut b = ModelHandle::new(Box::new(make_uniform_model(4).unwrap()), store, "b");
    let ckpt = a.snapshot().unwrap();
    assert!(matches!(b.restore(&ckpt), Err(BackendError::RuntimeMismatch { .. })));
    a.restore(&ckpt).unwrap();
}

#[test]
fn directory_store_survives_a_new_handle() {
    let dir = tempfile::tempdir().unwrap();
    let c = suite(CorpusKind::OpenCloze);
    let store: Arc<dyn CheckpointStore> = Arc::new(DirCheckpointStore::new(dir.path()).unwrap());
    let mut h = ModelHandle::new(Box::new(tiny(&c, ModelFamily::SeqToSeq, 9)), store.clone(), "disk");
    let ckpt = h.snapshot().unwrap();
    let before = scores(&h, &c);
    drop(h);
    let mut fresh = tiny(&c, ModelFamily::SeqToSeq, 9);
    fresh.params_mut().iter_mut().for_each(|p| *p *= 0.5);
    let mut h2 = ModelHandle::new(Box::new(fresh), store, "disk2");
    h2.restore(&ckpt).unwrap();
    assert_eq!(scores(&h2, &c), before);
    assert!(matches!(
        h2.restore(&ekp_core::backend::CheckpointRef {
            checkpoint_id: "missing".into(),
            ..ckpt
        }),
        Err(BackendError::CheckpointNotFound(_))
    ));
}

#[test]
fn table_runtime_contract() {
    let mut h = ModelHandle::in_memory(Box::new(make_uniform_model(8).unwrap()));
    let base = h.snapshot().unwrap();
    let digest = h.parameter_digest(ParamSelection::All);
    let inst = TrainingInstance::left_to_right("w1 w2 w3");
    let noop = TrainConfig {
        learning_rate: 0.0,
        epochs: 2,
        scope: TrainScope::Full,
    };
    assert!(
        !h.finetune(std::slice::from_ref(&inst), &noop)
            .unwrap()
            .parameters_changed
    );
    assert!(h.is_at(&base));
    let real = TrainConfig {
        learning_rate: 0.1,
        ..noop
    };
    assert!(matches!(h.finetune(&[inst], &real), Err(BackendError::Unsupported(_))));
    h.restore(&base).unwrap();
    assert_eq!(h.parameter_digest(ParamSelection::All), digest);
    assert!(matches!(
        h.score_span("no mask here", "w1"),
        Err(BackendError::BadMask(0))
    ));
    assert!(matches!(
        h.score_span("a <MASK> <MASK>", "w1"),
        Err(BackendError::BadMask(2))
    ));
    assert!(matches!(h.score_span("a <MASK>", "  "), Err(BackendError::EmptySpan)));
}

#[test]
fn table_scores_match_hand_computed_probabilities() {
    let m = TableModel::from_toml_str(
        r#"
name = "hand"
family = "left_to_right"
vocab = ["<unk>", "<s>", "a", "b"]

[tables]
"<s>" = [0.1, 0.0, 0.6, 0.3]
"a" = [0.25, 0.25, 0.25, 0.25]
"b" = [0.0, 0.0, 0.5, 0.5]
"#,
    )
    .unwrap();
    let h = ModelHandle::in_memory(Box::new(m));
    let s = h.score_span("<MASK>", "a b").unwrap();
    assert_eq!(s.token_nlls(), &[-(0.6f64.ln()), -(0.25f64.ln())]);
    let s = h.score_span("b <MASK>", "b a").unwrap();
    assert_eq!(s.token_nlls(), &[-(0.5f64.ln()), -(0.5f64.ln())]);
    assert!(h.score_span("b <MASK>", "zzz").is_err());
}
