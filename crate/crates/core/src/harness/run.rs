use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::spec::ExperimentSpec;
use super::{Harness, HarnessError, Prepared};
use crate::analysis::probe_definition_similarity;
use crate::backend::{
    CheckpointRef, CheckpointStore, MemoryCheckpointStore, ModelHandle, ParamSelection, RuntimeFactory,
};
use crate::corpus::{gold_in_definition, ProbeExample};
use crate::injection::{inject, InjectionConfig, InjectionContext};
use crate::metrics::{
    aggregate_by_method, mc_outcome, per_token_perplexity, specificity_delta, write_summary_csv, EvalRecord, McOutcome,
    Regime, TargetMetrics,
};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";

/// A record slot whose evaluation failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub example_id: String,
    pub method: String,
    pub config_digest: String,
    pub error: String,
}

/// One line of `results.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResultEntry {
    Record(EvalRecord),
    Error(ErrorEntry),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub example_id: String,
    pub method: String,
    pub config_digest: String,
}

impl ResultEntry {
    pub fn key(&self) -> RecordKey {
        let (example_id, method, config_digest) = match self {
            ResultEntry::Record(r) => (&r.example_id, &r.method, &r.config_digest),
            ResultEntry::Error(e) => (&e.example_id, &e.method, &e.config_digest),
        };
        RecordKey {
            example_id: example_id.clone(),
            method: method.clone(),
            config_digest: config_digest.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeMeta {
    pub adapter: String,
    pub runtime_id: String,
    pub tokenizer_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodEntry {
    pub label: String,
    pub method: String,
    pub config_digest: String,
}

/// Run metadata written next to the results. Holds no timestamps so that
/// repeated runs produce identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec_name: String,
    pub spec_digest: String,
    pub runtime: RuntimeMeta,
    pub examples: usize,
    pub methods: Vec<MethodEntry>,
    pub pool_tag: String,
    pub pool_entities: Vec<String>,
    pub pool_examples: usize,
    pub records: usize,
    pub errors: usize,
    pub complete: bool,
}

/// Records and error entries of one run, in canonical order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultSet {
    pub records: Vec<EvalRecord>,
    pub errors: Vec<ErrorEntry>,
    pub manifest: Option<Manifest>,
}

impl ResultSet {
    pub fn from_entries(entries: impl IntoIterator<Item = ResultEntry>) -> Self {
        let mut out = Self::default();
        for e in entries {
            match e {
                ResultEntry::Record(r) => out.records.push(r),
                ResultEntry::Error(e) => out.errors.push(e),
            }
        }
        out
    }

    pub fn spec_digest(&self) -> Option<&str> {
        self.manifest.as_ref().map(|m| m.spec_digest.as_str())
    }

    /// Load a results file, a run directory, or a directory tree of runs
    /// (such as a sweep), concatenating in path order.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        if path.is_file() {
            let mut set = Self::from_entries(read_entries(path, false)?.0);
            if let Some(dir) = path.parent() {
                set.manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
            }
            return Ok(set);
        }
        let direct = path.join(RESULTS_FILE);
        if direct.is_file() {
            return Self::load(&direct);
        }
        let mut files = Vec::new();
        collect_results(path, &mut files)?;
        if files.is_empty() {
            return Err(HarnessError::MissingPath(direct));
        }
        files.sort();
        let mut out = Self::default();
        for f in files {
            let set = Self::load(&f)?;
            out.records.extend(set.records);
            out.errors.extend(set.errors);
        }
        Ok(out)
    }
}

fn collect_results(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    for entry in entries {
        let p = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        if p.is_dir() {
            collect_results(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == RESULTS_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// Parse a results file. With `repair`, a torn final line (an interrupted
/// write) is cut off instead of failing.
fn read_entries(path: &Path, repair: bool) -> Result<(Vec<ResultEntry>, u64), HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut entries = Vec::new();
    let mut good_len = 0u64;
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| HarnessError::io(path, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            good_len += n as u64;
            continue;
        }
        match serde_json::from_str::<ResultEntry>(line.trim_end()) {
            Ok(e) if complete || !repair => {
                entries.push(e);
                good_len += n as u64;
            }
            Ok(_) => break,
            Err(_) if repair && !complete => break,
            Err(e) => {
                return Err(HarnessError::ResultsParse {
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok((entries, good_len))
}

fn read_manifest(path: &Path) -> Result<Option<Manifest>, HarnessError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| HarnessError::ResultsParse {
            line: 0,
            message: format!("manifest: {e}"),
        })
}

fn write_manifest(path: &Path, m: &Manifest) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(m).expect("manifest serializes");
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// Seed of the random stream for one (example, method) pair. Depends only on
/// its inputs, so adding or removing examples never shifts other streams.
pub fn example_seed(global_seed: u64, config_seed: u64, example_id: &str, method: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(config_seed.to_le_bytes());
    h.update((example_id.len() as u64).to_le_bytes());
    h.update(example_id.as_bytes());
    h.update(method.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

enum Target {
    Perplexity(f64),
    Choice(McOutcome, usize),
}

fn score_target(handle: &ModelHandle, probe: &str, ex: &ProbeExample, regime: Regime) -> Result<Target, HarnessError> {
    match regime {
        Regime::Perplexity => Ok(Target::Perplexity(per_token_perplexity(
            &handle.score_span(probe, &ex.gold_span)?,
        ))),
        Regime::Accuracy => {
            let cands = ex.candidates.as_deref().unwrap_or_default();
            let scores = handle.score_candidates(probe, cands)?;
            Ok(Target::Choice(mc_outcome(&scores, &ex.gold_span)?, cands.len()))
        }
    }
}

/// Per-example pool metric: perplexity, or 1/0 correctness.
pub(super) fn score_pool(
    handle: &ModelHandle,
    pool: &[ProbeExample],
    regime: Regime,
) -> Result<Vec<f64>, HarnessError> {
    pool.iter()
        .map(|ex| {
            Ok(match score_target(handle, &ex.probe, ex, regime)? {
                Target::Perplexity(p) => p,
                Target::Choice(o, _) => f64::from(u8::from(o.correct)),
            })
        })
        .collect()
}

struct Worker {
    handle: ModelHandle,
    base: CheckpointRef,
    label: String,
    rebuilds: usize,
}

impl Worker {
    fn new(
        factory: &dyn RuntimeFactory,
        store: &Arc<dyn CheckpointStore>,
        label: String,
    ) -> Result<Self, HarnessError> {
        let mut handle = ModelHandle::new(factory.build()?, store.clone(), label.clone());
        let base = handle.snapshot()?;
        Ok(Self {
            handle,
            base,
            label,
            rebuilds: 0,
        })
    }

    /// Back to the base parameters; a fresh replica if restoring fails.
    fn reset(&mut self, factory: &dyn RuntimeFactory, store: &Arc<dyn CheckpointStore>) -> Result<(), HarnessError> {
        if self.handle.is_at(&self.base) {
            return Ok(());
        }
        if self.handle.restore(&self.base).is_ok() {
            return Ok(());
        }
        self.rebuilds += 1;
        let label = format!("{}-r{}", self.label, self.rebuilds);
        self.handle = ModelHandle::new(factory.build()?, store.clone(), label);
        self.handle.restore(&self.base)?;
        Ok(())
    }
}

struct Task<'a> {
    example: &'a ProbeExample,
    config: &'a InjectionConfig,
    label: String,
    digest: String,
}

struct Shared<'a> {
    prepared: &'a Prepared,
    harness: &'a Harness,
    regime: Regime,
    seed: u64,
    base_pool: &'a [f64],
}

fn evaluate(w: &mut Worker, task: &Task<'_>, sh: &Shared<'_>) -> Result<EvalRecord, HarnessError> {
    let p = sh.prepared;
    let ex = task.example;
    let ent = p.corpus.entity_of(ex);
    let pre = score_target(&w.handle, &ex.probe, ex, sh.regime)?;
    let ctx = InjectionContext {
        corpus: &p.corpus,
        editors: &sh.harness.editors,
        sro: &sh.harness.sro,
    };
    let seed = example_seed(sh.seed, task.config.seed, &ex.example_id, &task.label);
    let receipt = inject(&mut w.handle, &w.base, ent, ex, task.config, &ctx, seed)?;
    let post_probe = receipt.augmented_probe.as_deref().unwrap_or(&ex.probe);
    let post = score_target(&w.handle, post_probe, ex, sh.regime)?;
    let pool_post = if w.handle.is_at(&w.base) {
        sh.base_pool.to_vec()
    } else {
        score_pool(&w.handle, &p.pool.examples, sh.regime)?
    };
    let spec_delta = specificity_delta(sh.base_pool, &pool_post)?;
    let target = match (pre, post) {
        (Target::Perplexity(pre_ppl), Target::Perplexity(post_ppl)) => TargetMetrics::Perplexity { pre_ppl, post_ppl },
        (Target::Choice(a, n), Target::Choice(b, _)) => TargetMetrics::Accuracy {
            pre_rank: a.rank,
            post_rank: b.rank,
            pre_correct: a.correct,
            post_correct: b.correct,
            candidate_count: n,
        },
        _ => unreachable!("one regime per run"),
    };
    Ok(EvalRecord {
        example_id: ex.example_id.clone(),
        entity_id: ex.entity_id.clone(),
        method: task.label.clone(),
        injection: task.config.method,
        config_digest: task.digest.clone(),
        epochs: task.config.epochs,
        target,
        specificity_pre: sh.base_pool.to_vec(),
        specificity_post: pool_post,
        specificity_delta: spec_delta,
        parameters_changed: receipt.parameters_changed,
        included: gold_in_definition(ex, ent),
        similarity: probe_definition_similarity(&ex.probe, &ent.definition, &sh.harness.scorers),
    })
}

/// Run every (example, method) pair into `out_dir`, resuming from whatever
/// an earlier run of the same spec already persisted there.
pub(super) fn run_in(harness: &Harness, spec: &ExperimentSpec, out_dir: &Path) -> Result<ResultSet, HarnessError> {
    let prepared = harness.prepare(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let results_path = out_dir.join(RESULTS_FILE);
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let spec_digest = spec.digest();

    let mut done = BTreeSet::new();
    if results_path.exists() {
        match read_manifest(&manifest_path)? {
            Some(m) if m.spec_digest == spec_digest => {}
            Some(m) => {
                return Err(HarnessError::SpecMismatch {
                    expected: spec_digest,
                    found: m.spec_digest,
                })
            }
            None => {
                return Err(HarnessError::SpecMismatch {
                    expected: spec_digest,
                    found: "no manifest".into(),
                })
            }
        }
        let (entries, good_len) = read_entries(&results_path, true)?;
        let f = OpenOptions::new()
            .write(true)
            .open(&results_path)
            .map_err(|e| HarnessError::io(&results_path, e))?;
        f.set_len(good_len).map_err(|e| HarnessError::io(&results_path, e))?;
        done.extend(entries.iter().map(ResultEntry::key));
    }

    let regime = match prepared.corpus.kind {
        crate::corpus::CorpusKind::OpenCloze => Regime::Perplexity,
        crate::corpus::CorpusKind::MultipleChoice => Regime::Accuracy,
    };
    let configs = spec.configs();
    let store: Arc<dyn CheckpointStore> = Arc::new(MemoryCheckpointStore::new());
    let factory = prepared.factory.as_ref();
    let first = Worker::new(factory, &store, "w0".into())?;
    let base_digest = first.handle.parameter_digest(ParamSelection::All);
    let base_pool = score_pool(&first.handle, &prepared.pool.examples, regime)?;

    let mut manifest = Manifest {
        spec_name: spec.name.clone(),
        spec_digest: spec_digest.clone(),
        runtime: RuntimeMeta {
            adapter: spec.runtime.adapter.clone(),
            runtime_id: first.handle.runtime_id(),
            tokenizer_id: first.handle.tokenizer_id(),
        },
        examples: prepared.corpus.len(),
        methods: configs
            .iter()
            .map(|c| MethodEntry {
                label: c.display_label(),
                method: c.method.to_string(),
                config_digest: c.digest(),
            })
            .collect(),
        pool_tag: prepared.pool.source_tag.clone(),
        pool_entities: prepared.pool.entity_ids.clone(),
        pool_examples: prepared.pool.len(),
        records: 0,
        errors: 0,
        complete: false,
    };
    write_manifest(&manifest_path, &manifest)?;

    let tasks: Vec<Task<'_>> = prepared
        .corpus
        .examples
        .iter()
        .flat_map(|ex| {
            configs.iter().map(move |c| Task {
                example: ex,
                config: c,
                label: c.display_label(),
                digest: c.digest(),
            })
        })
        .filter(|t| {
            !done.contains(&RecordKey {
                example_id: t.example.example_id.clone(),
                method: t.label.clone(),
                config_digest: t.digest.clone(),
            })
        })
        .collect();

    let n_workers = spec.workers.max(1).min(tasks.len().max(1));
    let mut workers = vec![first];
    for i in 1..n_workers {
        workers.push(Worker::new(factory, &store, format!("w{i}"))?);
    }
    let shared = Shared {
        prepared: &prepared,
        harness,
        regime,
        seed: spec.seed,
        base_pool: &base_pool,
    };

    let mut sink = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&results_path)
        .map_err(|e| HarnessError::io(&results_path, e))?;
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<ResultEntry, HarnessError>)>();

    let workers: Vec<Worker> = std::thread::scope(|scope| -> Result<Vec<Worker>, HarnessError> {
        let mut joins = Vec::new();
        for mut w in workers {
            let tx = tx.clone();
            let (tasks, next, shared, store) = (&tasks, &next, &shared, &store);
            joins.push(scope.spawn(move || {
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(task) = tasks.get(i) else { break };
                    let entry = match evaluate(&mut w, task, shared) {
                        Ok(r) => ResultEntry::Record(r),
                        Err(e) => ResultEntry::Error(ErrorEntry {
                            example_id: task.example.example_id.clone(),
                            method: task.label.clone(),
                            config_digest: task.digest.clone(),
                            error: e.to_string(),
                        }),
                    };
                    let reset = w.reset(factory, store).map(|_| entry);
                    let failed = reset.is_err();
                    if tx.send((i, reset)).is_err() || failed {
                        break;
                    }
                }
                w
            }));
        }
        drop(tx);

        let mut pending = std::collections::BTreeMap::new();
        let mut cursor = 0;
        let mut fatal = None;
        for (i, entry) in rx {
            match entry {
                Ok(e) => {
                    pending.insert(i, e);
                }
                Err(e) => {
                    fatal.get_or_insert(e);
                    next.store(tasks.len(), Ordering::SeqCst);
                }
            }
            while let Some(e) = pending.remove(&cursor) {
                if fatal.is_none() {
                    let mut line = serde_json::to_string(&e).expect("entry serializes");
                    line.push('\n');
                    sink.write_all(line.as_bytes())
                        .and_then(|_| sink.flush())
                        .map_err(|err| HarnessError::io(&results_path, err))?;
                }
                cursor += 1;
            }
        }
        let workers: Vec<Worker> = joins
            .into_iter()
            .map(|j| j.join().expect("worker thread panicked"))
            .collect();
        match fatal {
            Some(e) => Err(e),
            None => Ok(workers),
        }
    })?;

    for mut w in workers {
        w.handle.restore(&w.base)?;
        let digest = w.handle.parameter_digest(ParamSelection::All);
        if digest != base_digest {
            return Err(HarnessError::IsolationViolated(format!(
                "replica {} digest {digest} differs from base {base_digest}",
                w.label
            )));
        }
        let pool = score_pool(&w.handle, &prepared.pool.examples, regime)?;
        if pool.iter().zip(&base_pool).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(HarnessError::IsolationViolated(format!(
                "replica {} scores differ from the base model",
                w.label
            )));
        }
    }

    let mut set = ResultSet::from_entries(read_entries(&results_path, false)?.0);
    if !set.records.is_empty() {
        let reports = aggregate_by_method(&set.records)?;
        let path = out_dir.join(SUMMARY_FILE);
        let f = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        write_summary_csv(&reports, f)?;
    }
    manifest.records = set.records.len();
    manifest.errors = set.errors.len();
    manifest.complete = true;
    write_manifest(&manifest_path, &manifest)?;
    set.manifest = Some(manifest);
    Ok(set)
}
