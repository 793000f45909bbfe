//! C ABI over `ekp-core`.
//!
//! Every fallible function returns an [`EkpStatus`]. On failure the message
//! is kept in a thread-local slot readable through [`ekp_last_error`] until
//! the next failing call on the same thread. Objects are opaque handles that
//! must be released with their `_free` function; strings returned by the
//! library must be released with [`ekp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ekp_core::analysis::{jaccard, rouge_l};
use ekp_core::backend::{ModelFamily, ModelHandle};
use ekp_core::corpus::{filter_easy_subset, load_corpus, Corpus, CorpusKind, EntitySpec};
use ekp_core::harness::{validate_cmd, ExperimentSpec, Harness};
use ekp_core::injection::{convert_to_sro, SroOutcome};
use ekp_core::metrics::per_token_perplexity;
use ekp_core::toy::{make_uniform_model, SyntheticSuite, TableModel, TinyConfig, TinyTrainableModel, WordTokenizer};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EkpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Corpus = 3,
    Backend = 4,
    Injection = 5,
    Harness = 6,
    InvalidArgument = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EkpCorpusKind {
    OpenCloze = 0,
    MultipleChoice = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EkpFamily {
    LeftToRight = 0,
    SeqToSeq = 1,
}

/// Loaded probe corpus.
pub struct EkpCorpus(Corpus);

/// A language model behind the scoring contract.
pub struct EkpModel(ModelHandle);

impl From<EkpCorpusKind> for CorpusKind {
    fn from(k: EkpCorpusKind) -> Self {
        match k {
            EkpCorpusKind::OpenCloze => CorpusKind::OpenCloze,
            EkpCorpusKind::MultipleChoice => CorpusKind::MultipleChoice,
        }
    }
}

impl From<EkpFamily> for ModelFamily {
    fn from(f: EkpFamily) -> Self {
        match f {
            EkpFamily::LeftToRight => ModelFamily::LeftToRight,
            EkpFamily::SeqToSeq => ModelFamily::SeqToSeq,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(EkpStatus, String);

impl Failure {
    fn new(status: EkpStatus, e: impl std::fmt::Display) -> Self {
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EkpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EkpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside ekp".into());
            EkpStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(EkpStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(EkpStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(EkpStatus::NullArgument, format!("{what} is null")))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(EkpStatus::NullArgument, format!("{what} is null")))
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Failure::new(EkpStatus::InvalidArgument, e))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn ekp_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ekp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ekp_corpus_load(
    path: *const c_char,
    kind: EkpCorpusKind,
    out_corpus: *mut *mut EkpCorpus,
) -> EkpStatus {
    guard(|| {
        let path = text(path, "path")?;
        let slot = out(out_corpus, "out_corpus")?;
        let c = load_corpus(Path::new(path), kind.into()).map_err(|e| Failure::new(EkpStatus::Corpus, e))?;
        *slot = Box::into_raw(Box::new(EkpCorpus(c)));
        Ok(())
    })
}

/// Seeded synthetic suite with three probes per entity.
///
/// # Safety
/// `out_corpus` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ekp_corpus_synthetic(
    kind: EkpCorpusKind,
    entities: usize,
    seed: u64,
    out_corpus: *mut *mut EkpCorpus,
) -> EkpStatus {
    guard(|| {
        let slot = out(out_corpus, "out_corpus")?;
        if entities == 0 {
            return Err(Failure::new(EkpStatus::InvalidArgument, "entities must be positive"));
        }
        *slot = Box::into_raw(Box::new(EkpCorpus(
            SyntheticSuite::new(kind.into(), entities, seed).generate(),
        )));
        Ok(())
    })
}

/// New corpus holding the examples whose gold span occurs in the definition.
///
/// # Safety
/// `corpus` must come from this library; `out_corpus` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ekp_corpus_filter_easy(
    corpus: *const EkpCorpus,
    out_corpus: *mut *mut EkpCorpus,
) -> EkpStatus {
    guard(|| {
        let c = get(corpus, "corpus")?;
        let slot = out(out_corpus, "out_corpus")?;
        *slot = Box::into_raw(Box::new(EkpCorpus(filter_easy_subset(&c.0))));
        Ok(())
    })
}

/// Number of probe examples; 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ekp_corpus_len(corpus: *const EkpCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// Number of distinct entities the examples refer to.
///
/// # Safety
/// `corpus` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ekp_corpus_entity_count(corpus: *const EkpCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.referenced_entities().len())
}

/// # Safety
/// `corpus` must be null or come from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ekp_corpus_free(corpus: *mut EkpCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Uniform table model over `k` tokens.
///
/// # Safety
/// `out_model` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ekp_model_uniform(k: usize, out_model: *mut *mut EkpModel) -> EkpStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let m = make_uniform_model(k).map_err(|e| Failure::new(EkpStatus::Backend, e))?;
        *slot = Box::into_raw(Box::new(EkpModel(ModelHandle::in_memory(Box::new(m)))));
        Ok(())
    })
}

/// Table model from a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_model` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ekp_model_table_load(path: *const c_char, out_model: *mut *mut EkpModel) -> EkpStatus {
    guard(|| {
        let path = text(path, "path")?;
        let slot = out(out_model, "out_model")?;
        let m = TableModel::load(Path::new(path)).map_err(|e| Failure::new(EkpStatus::Backend, e))?;
        *slot = Box::into_raw(Box::new(EkpModel(ModelHandle::in_memory(Box::new(m)))));
        Ok(())
    })
}

/// Small trainable model whose vocabulary covers every text in `corpus`.
///
/// # Safety
/// `corpus` must come from this library; `out_model` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ekp_model_tiny(
    corpus: *const EkpCorpus,
    family: EkpFamily,
    init_seed: u64,
    out_model: *mut *mut EkpModel,
) -> EkpStatus {
    guard(|| {
        let c = &get(corpus, "corpus")?.0;
        let slot = out(out_model, "out_model")?;
        let texts = c
            .entities
            .values()
            .map(|e| e.definition.as_str())
            .chain(c.examples.iter().flat_map(|e| [e.probe.as_str(), e.gold_span.as_str()]));
        let mut cfg = TinyConfig::new(family.into());
        cfg.init_seed = init_seed;
        let m = TinyTrainableModel::new(cfg, WordTokenizer::from_texts(texts))
            .map_err(|e| Failure::new(EkpStatus::Backend, e))?;
        *slot = Box::into_raw(Box::new(EkpModel(ModelHandle::in_memory(Box::new(m)))));
        Ok(())
    })
}

/// Per-token perplexity of `span` at the single `<MASK>` of `probe`.
///
/// # Safety
/// `model` must come from this library; strings must be NUL-terminated;
/// `out_perplexity` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ekp_model_perplexity(
    model: *const EkpModel,
    probe: *const c_char,
    span: *const c_char,
    out_perplexity: *mut f64,
) -> EkpStatus {
    guard(|| {
        let m = get(model, "model")?;
        let probe = text(probe, "probe")?;
        let span = text(span, "span")?;
        let slot = out(out_perplexity, "out_perplexity")?;
        let score =
            m.0.score_span(probe, span)
                .map_err(|e| Failure::new(EkpStatus::Backend, e))?;
        *slot = per_token_perplexity(&score);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ekp_model_free(model: *mut EkpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Token-set Jaccard similarity.
///
/// # Safety
/// `a` and `b` must be NUL-terminated; `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ekp_jaccard(a: *const c_char, b: *const c_char, out_value: *mut f64) -> EkpStatus {
    guard(|| {
        let (a, b) = (text(a, "a")?, text(b, "b")?);
        *out(out_value, "out_value")? = jaccard(a, b);
        Ok(())
    })
}

/// ROUGE-L F-measure.
///
/// # Safety
/// `a` and `b` must be NUL-terminated; `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ekp_rouge_l(a: *const c_char, b: *const c_char, out_value: *mut f64) -> EkpStatus {
    guard(|| {
        let (a, b) = (text(a, "a")?, text(b, "b")?);
        *out(out_value, "out_value")? = rouge_l(a, b);
        Ok(())
    })
}

/// Subject / relation / object form of a masked sentence about an entity,
/// as JSON: `{"subject":..,"relation":..,"object":..}` or `{"filtered":..}`.
///
/// # Safety
/// Strings must be NUL-terminated; `out_json` must be valid. The result
/// must be released with [`ekp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ekp_convert_to_sro(
    entity_name: *const c_char,
    definition: *const c_char,
    sentence: *const c_char,
    gold: *const c_char,
    out_json: *mut *mut c_char,
) -> EkpStatus {
    guard(|| {
        let name = text(entity_name, "entity_name")?;
        let def = text(definition, "definition")?;
        let sentence = text(sentence, "sentence")?;
        let gold = text(gold, "gold")?;
        let slot = out(out_json, "out_json")?;
        let ent = EntitySpec::new("ffi", name, def);
        let outcome = convert_to_sro(&ent, sentence, gold).map_err(|e| Failure::new(EkpStatus::Injection, e))?;
        let json = match outcome {
            SroOutcome::Triple(t) => serde_json::to_string(&t),
            SroOutcome::Filtered(r) => serde_json::to_string(&serde_json::json!({ "filtered": r })),
        }
        .expect("plain data serializes");
        *slot = owned_string(json)?;
        Ok(())
    })
}

/// Validation report of a spec file, one problem per line; empty when
/// the spec is usable.
///
/// # Safety
/// `spec_path` must be NUL-terminated; `out_report` must be valid. The
/// result must be released with [`ekp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ekp_validate_spec(spec_path: *const c_char, out_report: *mut *mut c_char) -> EkpStatus {
    guard(|| {
        let path = text(spec_path, "spec_path")?;
        let slot = out(out_report, "out_report")?;
        *slot = owned_string(validate_cmd(Path::new(path)).join("\n"))?;
        Ok(())
    })
}

/// Run an experiment spec with the in-tree runtimes, writing results to
/// its output directory.
///
/// # Safety
/// `spec_path` must be NUL-terminated; the count pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ekp_run_experiment(
    spec_path: *const c_char,
    out_records: *mut usize,
    out_errors: *mut usize,
) -> EkpStatus {
    guard(|| {
        let path = text(spec_path, "spec_path")?;
        let records = out(out_records, "out_records")?;
        let errors = out(out_errors, "out_errors")?;
        let spec = ExperimentSpec::load(Path::new(path)).map_err(|e| Failure::new(EkpStatus::Harness, e))?;
        let set = Harness::default()
            .run(&spec)
            .map_err(|e| Failure::new(EkpStatus::Harness, e))?;
        *records = set.records.len();
        *errors = set.errors.len();
        Ok(())
    })
}
