use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::backend::ModelFamily;
use crate::corpus::{load_corpus, Corpus, CorpusKind};
use crate::injection::{InjectionConfig, InjectionMethod, Preset};
use crate::toy::SyntheticSuite;

/// Overrides the spec's output directory.
pub const OUTPUT_DIR_ENV: &str = "EKP_OUTPUT_DIR";
/// Base directory for relative runtime adapter paths.
pub const RUNTIME_PATH_ENV: &str = "EKP_RUNTIME_PATH";

/// A full experiment: corpus, specificity pool, runtime and methods.
///
/// Relative paths resolve against the directory of the spec file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub corpus: CorpusSource,
    pub pool: PoolSpec,
    pub runtime: RuntimeSpec,
    pub methods: Vec<MethodSpec>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_workers() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A JSONL corpus on disk or a generated synthetic suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub kind: CorpusKind,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Keep only examples whose gold span occurs in the definition.
    #[serde(default)]
    pub easy_only: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub entities: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_probes")]
    pub probes_per_entity: usize,
    #[serde(default)]
    pub id_prefix: Option<String>,
}

fn default_probes() -> usize {
    3
}

impl SyntheticSpec {
    pub fn suite(&self, kind: CorpusKind) -> SyntheticSuite {
        let mut s = SyntheticSuite::new(kind, self.entities, self.seed);
        s.probes_per_entity = self.probes_per_entity;
        if let Some(p) = &self.id_prefix {
            s.id_prefix = p.clone();
        }
        s
    }
}

/// Where the specificity probes come from. The pool has the corpus's kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Number of pool entities to sample; the whole source when absent.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pool_tag")]
    pub tag: String,
}

fn default_pool_tag() -> String {
    "pool".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeSpec {
    pub adapter: String,
    #[serde(default)]
    pub family: Option<ModelFamily>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub vocab_size: Option<usize>,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub layers: Option<usize>,
    #[serde(default)]
    pub init_seed: Option<u64>,
}

/// One `[[methods]]` entry. Explicit hyperparameters override the preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: InjectionMethod,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub epochs: Option<u32>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub editor_plugin: Option<String>,
}

impl MethodSpec {
    pub fn config(&self) -> InjectionConfig {
        let mut c = match self.preset {
            Some(p) => InjectionConfig::from_preset(self.method, p),
            None => InjectionConfig::new(self.method),
        };
        if self.learning_rate.is_some() {
            c.learning_rate = self.learning_rate;
        }
        if self.epochs.is_some() {
            c.epochs = self.epochs;
        }
        c.seed = self.seed;
        c.label = self.label.clone();
        c.editor_plugin = self.editor_plugin.clone();
        c.normalized()
    }
}

impl From<&InjectionConfig> for MethodSpec {
    fn from(c: &InjectionConfig) -> Self {
        Self {
            method: c.method,
            label: c.label.clone(),
            preset: None,
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            seed: c.seed,
            editor_plugin: c.editor_plugin.clone(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let mut spec: ExperimentSpec = toml::from_str(text).map_err(|e| HarnessError::Spec(e.to_string()))?;
        spec.base_dir = base_dir.into();
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes")
    }

    pub fn configs(&self) -> Vec<InjectionConfig> {
        self.methods.iter().map(MethodSpec::config).collect()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Output directory after applying the environment override.
    pub fn output_path(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.resolve(&self.output_dir),
        }
    }

    /// Runtime file path, relative to the runtime path variable when set.
    pub fn runtime_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            return p.to_path_buf();
        }
        match std::env::var_os(RUNTIME_PATH_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(p),
            _ => self.base_dir.join(p),
        }
    }

    /// Hash of everything that affects results. Output location and worker
    /// count are excluded.
    pub fn digest(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        canon.workers = 0;
        canon.methods = self.configs().iter().map(MethodSpec::from).collect();
        let json = serde_json::to_vec(&canon).expect("spec serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn load_corpus(&self) -> Result<Corpus, HarnessError> {
        let corpus = load_source(
            self,
            self.corpus.kind,
            &self.corpus.path,
            &self.corpus.synthetic,
            "corpus",
        )?;
        Ok(if self.corpus.easy_only {
            crate::corpus::filter_easy_subset(&corpus)
        } else {
            corpus
        })
    }

    pub fn load_pool_source(&self) -> Result<Corpus, HarnessError> {
        load_source(self, self.corpus.kind, &self.pool.path, &self.pool.synthetic, "pool")
    }
}

fn load_source(
    spec: &ExperimentSpec,
    kind: CorpusKind,
    path: &Option<PathBuf>,
    synthetic: &Option<SyntheticSpec>,
    what: &str,
) -> Result<Corpus, HarnessError> {
    match (path, synthetic) {
        (Some(p), None) => {
            let p = spec.resolve(p);
            if !p.exists() {
                return Err(HarnessError::MissingPath(p));
            }
            Ok(load_corpus(&p, kind)?)
        }
        (None, Some(s)) => Ok(s.suite(kind).generate()),
        _ => Err(HarnessError::Spec(format!(
            "{what} needs exactly one of `path` or `synthetic`"
        ))),
    }
}

/// Parse an epoch grid: `a..b` (inclusive), `a..=b`, or a comma list.
pub fn parse_epoch_grid(text: &str) -> Result<Vec<u32>, HarnessError> {
    let bad = || HarnessError::Spec(format!("bad epoch grid '{text}'"));
    let t = text.trim();
    if let Some((a, b)) = t.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b): (u32, u32) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    t.split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|_| bad()))
        .collect()
}
