//! Entity-knowledge-propagation datasets: entities with definition sentences,
//! cloze probes about them, and the subsets and pools sliced from them.
//!
//! On disk a corpus is JSONL with one probe per line. Each line either
//! declares its entity (`entity_name` and `definition` present) or refers to
//! an entity declared on another line (both absent).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::text::{contains_verbatim, mask_count};

pub const MIN_CANDIDATES: usize = 2;
pub const MAX_CANDIDATES: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: invalid JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: field '{field}': {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: entity '{entity_id}' is referenced but never declared")]
    DanglingEntity { line: usize, entity_id: String },
    #[error("line {line}: entity '{entity_id}' is declared with conflicting fields")]
    InconsistentEntity { line: usize, entity_id: String },
    #[error("line {line}: duplicate example_id '{example_id}'")]
    DuplicateExample { line: usize, example_id: String },
    #[error("line {line}: example '{example_id}' is invalid: {report}")]
    InvalidExample {
        line: usize,
        example_id: String,
        report: ValidationReport,
    },
    #[error("entity '{entity_id}' is invalid: {report}")]
    InvalidEntity {
        entity_id: String,
        report: ValidationReport,
    },
    #[error("'{name}' is not mentioned in the text")]
    MentionNotFound { name: String },
    #[error("need {needed} entities for the pool but only {available} are eligible")]
    InsufficientEntities { needed: usize, available: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub entity_id: String,
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub definition: String,
    #[serde(default)]
    pub origination_date: Option<String>,
}

impl EntitySpec {
    pub fn new(entity_id: impl Into<String>, name: impl Into<String>, definition: impl Into<String>) -> Self {
        Self {
            entity_id: entity_id.into(),
            name: name.into(),
            aliases: Vec::new(),
            definition: definition.into(),
            origination_date: None,
        }
    }

    /// Name first, then aliases in declaration order.
    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }

    /// First mention of the entity in `text`, trying the name before any alias.
    pub fn locate_in(&self, text: &str) -> Result<(usize, usize), CorpusError> {
        self.surface_forms()
            .find_map(|form| locate_entity_mention(text, form).ok())
            .ok_or_else(|| CorpusError::MentionNotFound {
                name: self.name.clone(),
            })
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.name.trim().is_empty() {
            report.push(Violation::EmptyName);
        }
        if self.definition.trim().is_empty() {
            report.push(Violation::EmptyDefinition);
        } else if self.locate_in(&self.definition).is_err() {
            report.push(Violation::DefinitionMissesEntity);
        }
        if mask_count(&self.definition) > 0 {
            report.push(Violation::MaskInDefinition);
        }
        if let Some(date) = &self.origination_date {
            if !is_iso_date(date) {
                report.push(Violation::BadOriginationDate(date.clone()));
            }
        }
        report
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Np,
    Random,
    Authored,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceKind {
    Explicit,
    Implicit,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeExample {
    pub example_id: String,
    pub entity_id: String,
    pub probe: String,
    pub gold_span: String,
    pub candidates: Option<Vec<String>>,
    pub span_kind: SpanKind,
    pub inference_kind: Option<InferenceKind>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    OpenCloze,
    MultipleChoice,
}

impl fmt::Display for CorpusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusKind::OpenCloze => "open_cloze",
            CorpusKind::MultipleChoice => "multiple_choice",
        })
    }
}

impl std::str::FromStr for CorpusKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open_cloze" => Ok(CorpusKind::OpenCloze),
            "multiple_choice" => Ok(CorpusKind::MultipleChoice),
            other => Err(format!("unknown corpus kind '{other}'")),
        }
    }
}

/// An immutable, validated dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub kind: CorpusKind,
    pub entities: BTreeMap<String, EntitySpec>,
    pub examples: Vec<ProbeExample>,
}

impl Corpus {
    /// Build a corpus from in-memory values, applying the same checks as
    /// [`load_corpus`]. Line numbers in errors are 1-based example indices.
    pub fn from_parts(
        kind: CorpusKind,
        entities: impl IntoIterator<Item = EntitySpec>,
        examples: Vec<ProbeExample>,
    ) -> Result<Self, CorpusError> {
        let entities: BTreeMap<_, _> = entities.into_iter().map(|e| (e.entity_id.clone(), e)).collect();
        for ent in entities.values() {
            let report = ent.validate();
            if !report.is_empty() {
                return Err(CorpusError::InvalidEntity {
                    entity_id: ent.entity_id.clone(),
                    report,
                });
            }
        }
        let mut seen = BTreeSet::new();
        for (i, ex) in examples.iter().enumerate() {
            check_example(kind, &entities, ex, i + 1, &mut seen)?;
        }
        Ok(Self {
            kind,
            entities,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn entity(&self, entity_id: &str) -> Option<&EntitySpec> {
        self.entities.get(entity_id)
    }

    /// Entity of an example. Every example resolves by construction.
    pub fn entity_of(&self, ex: &ProbeExample) -> &EntitySpec {
        &self.entities[&ex.entity_id]
    }

    /// Distinct entities referenced by at least one example.
    pub fn referenced_entities(&self) -> BTreeSet<&str> {
        self.examples.iter().map(|e| e.entity_id.as_str()).collect()
    }

    /// Keep the examples matching `keep`, dropping entities no longer referenced.
    pub fn retain_examples(&self, mut keep: impl FnMut(&ProbeExample, &EntitySpec) -> bool) -> Corpus {
        let examples: Vec<_> = self
            .examples
            .iter()
            .filter(|ex| keep(ex, self.entity_of(ex)))
            .cloned()
            .collect();
        let used: BTreeSet<&str> = examples.iter().map(|e| e.entity_id.as_str()).collect();
        let entities = self
            .entities
            .iter()
            .filter(|(id, _)| used.contains(id.as_str()))
            .map(|(id, e)| (id.clone(), e.clone()))
            .collect();
        Corpus {
            kind: self.kind,
            entities,
            examples,
        }
    }

    /// Write the corpus as JSONL, declaring the entity on every line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for ex in &self.examples {
            let ent = self.entity_of(ex);
            let record = serde_json::json!({
                "example_id": ex.example_id,
                "entity_id": ex.entity_id,
                "entity_name": ent.name,
                "aliases": ent.aliases,
                "definition": ent.definition,
                "probe": ex.probe,
                "gold_span": ex.gold_span,
                "candidates": ex.candidates,
                "span_kind": ex.span_kind,
                "inference_kind": ex.inference_kind,
                "origination_date": ent.origination_date,
            });
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    EmptyName,
    EmptyDefinition,
    DefinitionMissesEntity,
    MaskInDefinition,
    BadOriginationDate(String),
    MissingMask,
    MultipleMasks(usize),
    EmptyGold,
    ProbeMissesEntity,
    EntityMismatch { expected: String, found: String },
    GoldNotInCandidates,
    GoldRepeatedInCandidates(usize),
    CandidateCount(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyName => f.write_str("empty entity name"),
            Violation::EmptyDefinition => f.write_str("empty definition"),
            Violation::DefinitionMissesEntity => f.write_str("definition does not mention the entity"),
            Violation::MaskInDefinition => f.write_str("definition contains a mask placeholder"),
            Violation::BadOriginationDate(d) => write!(f, "origination date '{d}' is not an ISO date"),
            Violation::MissingMask => f.write_str("missing mask placeholder"),
            Violation::MultipleMasks(n) => write!(f, "multiple mask placeholders ({n})"),
            Violation::EmptyGold => f.write_str("empty gold span"),
            Violation::ProbeMissesEntity => f.write_str("probe does not mention the entity"),
            Violation::EntityMismatch { expected, found } => {
                write!(
                    f,
                    "example refers to entity '{found}' but was checked against '{expected}'"
                )
            }
            Violation::GoldNotInCandidates => f.write_str("gold not in candidates"),
            Violation::GoldRepeatedInCandidates(n) => write!(f, "gold appears {n} times in candidates"),
            Violation::CandidateCount(n) => {
                write!(f, "candidate count {n} outside {MIN_CANDIDATES}..={MAX_CANDIDATES}")
            }
        }
    }
}

/// Every violated invariant of an example; empty iff valid.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.messages().join("; "))
    }
}

pub fn validate_example(ex: &ProbeExample, ent: &EntitySpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    if ex.entity_id != ent.entity_id {
        report.push(Violation::EntityMismatch {
            expected: ent.entity_id.clone(),
            found: ex.entity_id.clone(),
        });
    }
    match mask_count(&ex.probe) {
        0 => report.push(Violation::MissingMask),
        1 => {}
        n => report.push(Violation::MultipleMasks(n)),
    }
    if ex.gold_span.trim().is_empty() {
        report.push(Violation::EmptyGold);
    }
    if ent.locate_in(&ex.probe).is_err() {
        report.push(Violation::ProbeMissesEntity);
    }
    if let Some(cands) = &ex.candidates {
        match cands.iter().filter(|c| **c == ex.gold_span).count() {
            0 => report.push(Violation::GoldNotInCandidates),
            1 => {}
            n => report.push(Violation::GoldRepeatedInCandidates(n)),
        }
        if !(MIN_CANDIDATES..=MAX_CANDIDATES).contains(&cands.len()) {
            report.push(Violation::CandidateCount(cands.len()));
        }
    }
    report
}

/// Examples whose gold span occurs verbatim in the entity's definition.
pub fn filter_easy_subset(corpus: &Corpus) -> Corpus {
    corpus.retain_examples(gold_in_definition)
}

/// The inclusion predicate shared by the easy-subset filter and the
/// inclusion stratification.
pub fn gold_in_definition(ex: &ProbeExample, ent: &EntitySpec) -> bool {
    contains_verbatim(&ent.definition, &ex.gold_span)
}

/// First case-insensitive occurrence of `name` in `text`, as a half-open
/// interval of character indices.
pub fn locate_entity_mention(text: &str, name: &str) -> Result<(usize, usize), CorpusError> {
    let not_found = || CorpusError::MentionNotFound { name: name.to_string() };
    let needle: Vec<char> = name.chars().collect();
    if needle.is_empty() {
        return Err(not_found());
    }
    let hay: Vec<char> = text.chars().collect();
    if needle.len() > hay.len() {
        return Err(not_found());
    }
    let same = |a: char, b: char| a == b || a.to_lowercase().eq(b.to_lowercase());
    (0..=hay.len() - needle.len())
        .find(|&start| needle.iter().zip(&hay[start..]).all(|(&n, &h)| same(n, h)))
        .map(|start| (start, start + needle.len()))
        .ok_or_else(not_found)
}

/// Probes about entities held out from editing, used to measure specificity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecificityPool {
    pub source_tag: String,
    pub entity_ids: Vec<String>,
    pub examples: Vec<ProbeExample>,
}

impl SpecificityPool {
    /// Use every example of `source` as the pool, without sampling.
    pub fn whole(source: &Corpus, source_tag: impl Into<String>) -> Self {
        Self {
            source_tag: source_tag.into(),
            entity_ids: source.referenced_entities().into_iter().map(String::from).collect(),
            examples: source.examples.clone(),
        }
    }

    /// Pool entities that also appear in `edited`.
    pub fn overlap_with<'a>(&'a self, edited: &BTreeSet<&str>) -> Vec<&'a str> {
        self.entity_ids
            .iter()
            .map(String::as_str)
            .filter(|id| edited.contains(id))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Sample `n` entities of `source` (excluding `edited`) and pool all of their
/// probes. A pure function of its arguments.
pub fn build_specificity_pool(
    source: &Corpus,
    n: usize,
    seed: u64,
    edited: &BTreeSet<&str>,
    source_tag: &str,
) -> Result<SpecificityPool, CorpusError> {
    let mut eligible: Vec<&str> = source
        .referenced_entities()
        .into_iter()
        .filter(|id| !edited.contains(id))
        .collect();
    if eligible.len() < n {
        return Err(CorpusError::InsufficientEntities {
            needed: n,
            available: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    let mut chosen: Vec<String> = eligible[..n].iter().map(|s| s.to_string()).collect();
    chosen.sort();
    let keep: BTreeSet<&str> = chosen.iter().map(String::as_str).collect();
    let examples = source
        .examples
        .iter()
        .filter(|ex| keep.contains(ex.entity_id.as_str()))
        .cloned()
        .collect();
    Ok(SpecificityPool {
        source_tag: source_tag.to_string(),
        entity_ids: chosen,
        examples,
    })
}

pub fn load_corpus(path: &Path, kind: CorpusKind) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_corpus(BufReader::new(file), kind).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn read_corpus<R: BufRead>(input: R, kind: CorpusKind) -> Result<Corpus, CorpusError> {
    let mut entities: BTreeMap<String, (EntitySpec, usize)> = BTreeMap::new();
    let mut pending: Vec<(ProbeExample, usize)> = Vec::new();

    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let Value::Object(obj) = value else {
            return Err(CorpusError::Parse {
                line: line_no,
                message: "record must be a JSON object".into(),
            });
        };
        let fields = Fields {
            obj: &obj,
            line: line_no,
        };
        let example = fields.example(kind)?;
        if let Some(ent) = fields.entity(&example.entity_id)? {
            match entities.get(&ent.entity_id) {
                Some((existing, _)) if *existing != ent => {
                    return Err(CorpusError::InconsistentEntity {
                        line: line_no,
                        entity_id: ent.entity_id,
                    });
                }
                Some(_) => {}
                None => {
                    let report = ent.validate();
                    if !report.is_empty() {
                        return Err(CorpusError::InvalidEntity {
                            entity_id: ent.entity_id,
                            report,
                        });
                    }
                    entities.insert(ent.entity_id.clone(), (ent, line_no));
                }
            }
        }
        pending.push((example, line_no));
    }

    let entities: BTreeMap<String, EntitySpec> = entities.into_iter().map(|(k, (e, _))| (k, e)).collect();
    let mut seen = BTreeSet::new();
    let mut examples = Vec::with_capacity(pending.len());
    for (ex, line_no) in pending {
        check_example(kind, &entities, &ex, line_no, &mut seen)?;
        examples.push(ex);
    }
    Ok(Corpus {
        kind,
        entities,
        examples,
    })
}

fn check_example(
    kind: CorpusKind,
    entities: &BTreeMap<String, EntitySpec>,
    ex: &ProbeExample,
    line: usize,
    seen: &mut BTreeSet<String>,
) -> Result<(), CorpusError> {
    let Some(ent) = entities.get(&ex.entity_id) else {
        return Err(CorpusError::DanglingEntity {
            line,
            entity_id: ex.entity_id.clone(),
        });
    };
    if kind == CorpusKind::MultipleChoice && ex.candidates.is_none() {
        return Err(CorpusError::Schema {
            line,
            field: "candidates".into(),
            message: "required for multiple-choice corpora".into(),
        });
    }
    if !seen.insert(ex.example_id.clone()) {
        return Err(CorpusError::DuplicateExample {
            line,
            example_id: ex.example_id.clone(),
        });
    }
    let report = validate_example(ex, ent);
    if !report.is_empty() {
        return Err(CorpusError::InvalidExample {
            line,
            example_id: ex.example_id.clone(),
            report,
        });
    }
    Ok(())
}

struct Fields<'a> {
    obj: &'a Map<String, Value>,
    line: usize,
}

impl Fields<'_> {
    fn err(&self, field: &str, message: &str) -> CorpusError {
        CorpusError::Schema {
            line: self.line,
            field: field.to_string(),
            message: message.to_string(),
        }
    }

    fn present(&self, field: &str) -> Option<&Value> {
        self.obj.get(field).filter(|v| !v.is_null())
    }

    fn string(&self, field: &str) -> Result<String, CorpusError> {
        self.opt_string(field)?
            .ok_or_else(|| self.err(field, "missing required field"))
    }

    fn opt_string(&self, field: &str) -> Result<Option<String>, CorpusError> {
        match self.present(field) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.err(field, "must be a string")),
        }
    }

    fn opt_string_list(&self, field: &str) -> Result<Option<Vec<String>>, CorpusError> {
        match self.present(field) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    _ => Err(self.err(field, "must be a list of strings")),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => Err(self.err(field, "must be a list of strings")),
        }
    }

    fn opt_enum<T: serde::de::DeserializeOwned>(&self, field: &str) -> Result<Option<T>, CorpusError> {
        match self.present(field) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|_| self.err(field, &format!("unrecognized value {v}"))),
        }
    }

    fn example(&self, kind: CorpusKind) -> Result<ProbeExample, CorpusError> {
        let candidates = self.opt_string_list("candidates")?;
        let span_kind = self.opt_enum("span_kind")?.unwrap_or(match kind {
            CorpusKind::OpenCloze => SpanKind::Np,
            CorpusKind::MultipleChoice => SpanKind::Authored,
        });
        Ok(ProbeExample {
            example_id: self.string("example_id")?,
            entity_id: self.string("entity_id")?,
            probe: self.string("probe")?,
            gold_span: self.string("gold_span")?,
            candidates,
            span_kind,
            inference_kind: self.opt_enum("inference_kind")?,
        })
    }

    fn entity(&self, entity_id: &str) -> Result<Option<EntitySpec>, CorpusError> {
        let name = self.opt_string("entity_name")?;
        let definition = self.opt_string("definition")?;
        match (name, definition) {
            (None, None) => Ok(None),
            (Some(_), None) => Err(self.err("definition", "missing required field")),
            (None, Some(_)) => Err(self.err("entity_name", "missing required field")),
            (Some(name), Some(definition)) => Ok(Some(EntitySpec {
                entity_id: entity_id.to_string(),
                name,
                aliases: self.opt_string_list("aliases")?.unwrap_or_default(),
                definition,
                origination_date: self.opt_string("origination_date")?,
            })),
        }
    }
}

fn is_iso_date(s: &str) -> bool {
    let parts: Vec<&str> = s.split('-').collect();
    let digits = |p: &str, n: usize| p.len() == n && p.bytes().all(|b| b.is_ascii_digit());
    match parts.as_slice() {
        [y, m] => digits(y, 4) && digits(m, 2) && (1..=12).contains(&m.parse::<u32>().unwrap_or(0)),
        [y, m, d] => {
            digits(y, 4)
                && digits(m, 2)
                && digits(d, 2)
                && (1..=12).contains(&m.parse::<u32>().unwrap_or(0))
                && (1..=31).contains(&d.parse::<u32>().unwrap_or(0))
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DRACULA_DEF: &str = "Dracula is a drama horror television serial developed by Mark Gatiss and Steven Moffat, based on the 1897 novel of the same name by Bram Stoker.";

    fn dracula() -> EntitySpec {
        EntitySpec::new("dracula", "Dracula", DRACULA_DEF)
    }

    fn mc_example(probe: &str, gold: &str, cands: &[&str]) -> ProbeExample {
        ProbeExample {
            example_id: "d1".into(),
            entity_id: "dracula".into(),
            probe: probe.into(),
            gold_span: gold.into(),
            candidates: Some(cands.iter().map(|s| s.to_string()).collect()),
            span_kind: SpanKind::Authored,
            inference_kind: Some(InferenceKind::Implicit),
        }
    }

    #[test]
    fn dracula_probe_is_valid() {
        let ex = mc_example(
            "Dracula makes me feel <MASK>.",
            "scared",
            &["athletic", "scared", "emotional"],
        );
        assert!(validate_example(&ex, &dracula()).is_empty());
    }

    #[test]
    fn two_masks_are_reported() {
        let ex = mc_example("Dracula <MASK> makes me feel <MASK>.", "scared", &["scared", "calm"]);
        let msgs = validate_example(&ex, &dracula()).messages();
        assert!(
            msgs.iter().any(|m| m.contains("multiple mask placeholders")),
            "{msgs:?}"
        );
    }

    #[test]
    fn missing_gold_is_reported() {
        let ex = mc_example("Dracula makes me feel <MASK>.", "scared", &["athletic", "calm"]);
        let msgs = validate_example(&ex, &dracula()).messages();
        assert!(msgs.iter().any(|m| m.contains("gold not in candidates")), "{msgs:?}");
    }

    #[test]
    fn candidate_bounds_and_entity_mention() {
        let ex = mc_example("It makes me feel <MASK>.", "scared", &["scared"]);
        let report = validate_example(&ex, &dracula());
        assert!(report.violations.contains(&Violation::ProbeMissesEntity));
        assert!(report.violations.contains(&Violation::CandidateCount(1)));
    }

    #[test]
    fn mention_location() {
        assert_eq!(
            locate_entity_mention("Dracula makes me feel <MASK>.", "Dracula").unwrap(),
            (0, 7)
        );
        assert_eq!(
            locate_entity_mention("The Dixie Fire is... The Dixie Fire caused...", "Dixie Fire").unwrap(),
            (4, 14)
        );
        assert_eq!(locate_entity_mention("the DIXIE fire", "Dixie Fire").unwrap(), (4, 14));
        assert!(matches!(
            locate_entity_mention("No mention here.", "Brexit"),
            Err(CorpusError::MentionNotFound { .. })
        ));
        assert!(locate_entity_mention("", "x").is_err());
    }

    #[test]
    fn aliases_count_as_mentions() {
        let mut ent = EntitySpec::new(
            "rd",
            "Roland Deschamplains",
            "Better known by his stage name Desham, he is an American singer.",
        );
        assert!(!ent.validate().is_empty());
        ent.aliases.push("Desham".into());
        assert!(ent.validate().is_empty());
    }

    #[test]
    fn iso_dates() {
        assert!(is_iso_date("2020-09-01"));
        assert!(is_iso_date("2021-09"));
        assert!(!is_iso_date("2021/09/01"));
        assert!(!is_iso_date("2021-13-01"));
    }

    #[test]
    fn missing_gold_field_names_the_field() {
        let line = r#"{"example_id":"x","entity_id":"e","entity_name":"Nana","definition":"Nana is a storm.","probe":"Nana hit <MASK>."}"#;
        let err = read_corpus(line.as_bytes(), CorpusKind::OpenCloze).unwrap_err();
        match err {
            CorpusError::Schema { line, field, .. } => {
                assert_eq!(line, 1);
                assert_eq!(field, "gold_span");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "{\"example_id\":\"a\",\"entity_id\":\"e\",\"entity_name\":\"Nana\",\"definition\":\"Nana is a storm.\",\"probe\":\"Nana hit <MASK>.\",\"gold_span\":\"Belize\"}\n{oops\n";
        match read_corpus(text.as_bytes(), CorpusKind::OpenCloze).unwrap_err() {
            CorpusError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dangling_reference_is_rejected() {
        let text = r#"{"example_id":"a","entity_id":"ghost","probe":"ghost <MASK>","gold_span":"x"}"#;
        assert!(matches!(
            read_corpus(text.as_bytes(), CorpusKind::OpenCloze),
            Err(CorpusError::DanglingEntity { line: 1, .. })
        ));
    }

    #[test]
    fn reference_lines_resolve_to_declarations_anywhere() {
        let text = concat!(
            r#"{"example_id":"a","entity_id":"n","probe":"Nana reached <MASK>.","gold_span":"Belize"}"#,
            "\n",
            r#"{"example_id":"b","entity_id":"n","entity_name":"Nana","definition":"Nana was a hurricane.","probe":"Nana was <MASK>.","gold_span":"strong"}"#,
        );
        let c = read_corpus(text.as_bytes(), CorpusKind::OpenCloze).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.entities.len(), 1);
        assert_eq!(c.examples[0].example_id, "a");
    }

    #[test]
    fn multiple_choice_requires_candidates() {
        let text = r#"{"example_id":"a","entity_id":"n","entity_name":"Nana","definition":"Nana is a storm.","probe":"Nana hit <MASK>.","gold_span":"Belize"}"#;
        assert!(matches!(
            read_corpus(text.as_bytes(), CorpusKind::MultipleChoice),
            Err(CorpusError::Schema { ref field, .. }) if field == "candidates"
        ));
    }

    fn cloze_corpus() -> Corpus {
        let mangum = EntitySpec::new(
            "mangum",
            "Mangum Fire",
            "The Mangum Fire was a wildfire burning in Kaibab National Forest in Arizona in the United States.",
        );
        let brexit = EntitySpec::new(
            "brexit",
            "Brexit",
            "Brexit was the withdrawal of the United Kingdom (UK) from the European Union (EU) at 23:00 31 January 2020 GMT.",
        );
        let ex = |id: &str, ent: &str, probe: &str, gold: &str| ProbeExample {
            example_id: id.into(),
            entity_id: ent.into(),
            probe: probe.into(),
            gold_span: gold.into(),
            candidates: None,
            span_kind: SpanKind::Np,
            inference_kind: None,
        };
        Corpus::from_parts(
            CorpusKind::OpenCloze,
            [mangum, brexit],
            vec![
                ex(
                    "m1",
                    "mangum",
                    "On June 14, the Mangum Fire jumped control lines towards Mangum Springs, <MASK>.",
                    "Arizona",
                ),
                ex(
                    "b1",
                    "brexit",
                    "Studies estimate that Brexit and the end of <MASK> will likely result in a large decline.",
                    "free movement",
                ),
            ],
        )
        .unwrap()
    }

    #[test]
    fn easy_subset_keeps_verbatim_gold_only() {
        let c = cloze_corpus();
        let easy = filter_easy_subset(&c);
        assert_eq!(easy.examples.len(), 1);
        assert_eq!(easy.examples[0].example_id, "m1");
        assert_eq!(easy.entities.len(), 1);
        assert_eq!(filter_easy_subset(&easy), easy);

        let empty = c.retain_examples(|_, _| false);
        assert!(filter_easy_subset(&empty).is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let c = cloze_corpus();
        let again = read_corpus(c.to_jsonl_string().as_bytes(), CorpusKind::OpenCloze).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn pool_sampling() {
        let c = cloze_corpus();
        let none = BTreeSet::new();
        let pool = build_specificity_pool(&c, 1, 3, &none, "t").unwrap();
        assert_eq!(pool, build_specificity_pool(&c, 1, 3, &none, "t").unwrap());
        assert_eq!(pool.entity_ids.len(), 1);

        let edited: BTreeSet<&str> = ["brexit"].into();
        let pool = build_specificity_pool(&c, 1, 99, &edited, "t").unwrap();
        assert_eq!(pool.entity_ids, vec!["mangum".to_string()]);
        assert!(pool.overlap_with(&edited).is_empty());

        assert!(matches!(
            build_specificity_pool(&c, 40, 0, &none, "t"),
            Err(CorpusError::InsufficientEntities {
                needed: 40,
                available: 2
            })
        ));
    }
}
