//! Experiment orchestration: specs, the per-example
//! inject / evaluate / restore loop, persistence, sweeps and analysis output.

mod adapters;
mod analyze;
mod plots;
mod run;
mod spec;

use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};

pub use adapters::{AdapterInputs, AdapterRegistry, RuntimeAdapter, TableAdapter, TinyAdapter, UniformAdapter};
pub use analyze::{analyze, analyze_cmd, curve_from_records, tradeoff_figure, AnalysisKind, AnalysisSpec};
pub use plots::{emit_plots, Figure};
pub use run::{
    example_seed, ErrorEntry, Manifest, MethodEntry, RecordKey, ResultEntry, ResultSet, RuntimeMeta, MANIFEST_FILE,
    RESULTS_FILE, SUMMARY_FILE,
};
pub use spec::{
    parse_epoch_grid, CorpusSource, ExperimentSpec, MethodSpec, PoolSpec, RuntimeSpec, SyntheticSpec, OUTPUT_DIR_ENV,
    RUNTIME_PATH_ENV,
};

use crate::analysis::ScorerRegistry;
use crate::analysis::{write_curve_csv, AnalysisError, BaseReference, CurvePoint};
use crate::backend::{BackendError, RuntimeFactory};
use crate::corpus::{build_specificity_pool, Corpus, CorpusError, SpecificityPool};
use crate::injection::{EditorRegistry, InjectionError, InjectionMethod, SroConverter};
use crate::metrics::{aggregate_by_method, MetricsError, Regime};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("spec failed validation:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),
    #[error("results line {line}: {message}")]
    ResultsParse { line: usize, message: String },
    #[error("output directory holds results of spec {found}, expected {expected}")]
    SpecMismatch { expected: String, found: String },
    #[error("isolation check failed: {0}")]
    IsolationViolated(String),
    #[error("results hold no records")]
    NoRecords,
    #[error("nothing to plot")]
    EmptyPlotInput,
    #[error("plot: {0}")]
    Plot(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Injection(#[from] InjectionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn is_regime_mismatch(&self) -> bool {
        matches!(
            self,
            HarnessError::Analysis(AnalysisError::RegimeMismatch { .. })
                | HarnessError::Metrics(MetricsError::RegimeMismatch(..))
        )
    }
}

/// Everything a run needs, loaded and checked.
pub struct Prepared {
    pub corpus: Corpus,
    pub pool: SpecificityPool,
    pub factory: Box<dyn RuntimeFactory>,
}

/// Result of an epoch sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub points: Vec<CurvePoint>,
    pub base: BaseReference,
    pub regime: Regime,
    pub runs: Vec<(u32, ResultSet)>,
    pub files: Vec<PathBuf>,
}

/// Plugin registries shared by every run.
#[derive(Clone, Default)]
pub struct Harness {
    pub adapters: AdapterRegistry,
    pub editors: EditorRegistry,
    pub scorers: ScorerRegistry,
    pub sro: SroConverter,
}

impl Harness {
    /// Every problem with `spec`, as report lines. Empty means valid.
    pub fn validate(&self, spec: &ExperimentSpec) -> Vec<String> {
        match self.check(spec) {
            Ok(_) => Vec::new(),
            Err(v) => v,
        }
    }

    pub fn prepare(&self, spec: &ExperimentSpec) -> Result<Prepared, HarnessError> {
        self.check(spec).map_err(HarnessError::Invalid)
    }

    fn check(&self, spec: &ExperimentSpec) -> Result<Prepared, Vec<String>> {
        let mut v = Vec::new();
        if spec.methods.is_empty() {
            v.push("no methods listed".to_string());
        }
        let mut keys = BTreeSet::new();
        for c in spec.configs() {
            let label = c.display_label();
            if let Err(e) = c.check() {
                v.push(format!("method {label}: {e}"));
            }
            if c.method == InjectionMethod::ExternalEditor {
                if let Some(name) = &c.editor_plugin {
                    if self.editors.get(name).is_none() {
                        v.push(format!("editor plugin not found: {name}"));
                    }
                }
            }
            if !keys.insert((label.clone(), c.digest())) {
                v.push(format!("method {label} is listed twice with the same settings"));
            }
        }
        let corpus = spec.load_corpus().map_err(|e| v.push(format!("corpus: {e}"))).ok();
        if corpus.as_ref().is_some_and(Corpus::is_empty) {
            v.push("corpus has no examples".into());
        }
        let pool_source = spec.load_pool_source().map_err(|e| v.push(format!("pool: {e}"))).ok();
        let mut pool = None;
        if let (Some(c), Some(src)) = (&corpus, &pool_source) {
            let edited = c.referenced_entities();
            let built = match spec.pool.n {
                Some(n) => build_specificity_pool(src, n, spec.pool.seed, &edited, &spec.pool.tag),
                None => Ok(SpecificityPool::whole(src, &spec.pool.tag)),
            };
            match built {
                Ok(p) => {
                    let overlap = p.overlap_with(&edited);
                    if !overlap.is_empty() {
                        v.push(format!("pool not disjoint: shares entities {}", overlap.join(", ")));
                    }
                    if p.is_empty() {
                        v.push("specificity pool is empty".into());
                    }
                    pool = Some(p);
                }
                Err(e) => v.push(format!("pool: {e}")),
            }
        }
        let factory = match self.adapters.get(&spec.runtime.adapter) {
            None => {
                v.push(format!("adapter not found: {}", spec.runtime.adapter));
                None
            }
            Some(adapter) => match (&corpus, &pool_source) {
                (Some(corpus), Some(pool_source)) => {
                    let inputs = AdapterInputs {
                        spec,
                        corpus,
                        pool_source,
                    };
                    adapter
                        .factory(&spec.runtime, &inputs)
                        .map_err(|e| v.push(format!("runtime: {e}")))
                        .ok()
                }
                _ => None,
            },
        };
        match (v.is_empty(), corpus, pool, factory) {
            (true, Some(corpus), Some(pool), Some(factory)) => Ok(Prepared { corpus, pool, factory }),
            _ => Err(v),
        }
    }

    /// Run the spec into its output directory.
    pub fn run(&self, spec: &ExperimentSpec) -> Result<ResultSet, HarnessError> {
        run::run_in(self, spec, &spec.output_path())
    }

    pub fn run_in(&self, spec: &ExperimentSpec, out_dir: &Path) -> Result<ResultSet, HarnessError> {
        run::run_in(self, spec, out_dir)
    }

    /// One full run per epoch count in `grid`, over the spec's fine-tuning
    /// methods. Each run lands in `sweep/epochs-<n>` under the output
    /// directory; a repeated grid entry reuses its run and repeats its point.
    pub fn sweep(&self, spec: &ExperimentSpec, grid: &[u32]) -> Result<Sweep, HarnessError> {
        self.sweep_in(spec, grid, &spec.output_path())
    }

    pub fn sweep_in(&self, spec: &ExperimentSpec, grid: &[u32], out_dir: &Path) -> Result<Sweep, HarnessError> {
        if grid.is_empty() {
            return Err(HarnessError::Spec("empty epoch grid".into()));
        }
        let methods: Vec<MethodSpec> = spec
            .methods
            .iter()
            .filter(|m| m.method.is_finetuning())
            .cloned()
            .collect();
        if methods.is_empty() {
            return Err(HarnessError::Spec("sweep needs at least one fine-tuning method".into()));
        }
        let root = out_dir.join("sweep");
        let mut points = Vec::new();
        let mut runs = Vec::new();
        let mut base = None;
        let mut regime = Regime::Perplexity;
        for &epochs in grid {
            let mut s = spec.clone();
            s.methods = methods
                .iter()
                .map(|m| MethodSpec {
                    epochs: Some(epochs),
                    ..m.clone()
                })
                .collect();
            let set = self.run_in(&s, &root.join(format!("epochs-{epochs}")))?;
            if set.records.is_empty() {
                return Err(HarnessError::NoRecords);
            }
            for report in aggregate_by_method(&set.records)? {
                regime = report.regime;
                base.get_or_insert(BaseReference::from_summary(&report));
                points.push(CurvePoint::from_summary(epochs, &report));
            }
            runs.push((epochs, set));
        }
        let base = base.expect("non-empty grid");
        let curve = root.join("curve.csv");
        let f = File::create(&curve).map_err(|e| HarnessError::io(&curve, e))?;
        write_curve_csv(&points, f)?;
        let mut files = vec![curve];
        files.extend(emit_plots(
            &[("tradeoff".into(), tradeoff_figure(points.clone(), base, regime))],
            &root,
        )?);
        Ok(Sweep {
            points,
            base,
            regime,
            runs,
            files,
        })
    }
}

/// Run with the in-tree runtimes and no editor plugins.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultSet, HarnessError> {
    Harness::default().run(spec)
}

/// Epoch sweep with the in-tree runtimes and no editor plugins.
pub fn sweep_tradeoff(spec: &ExperimentSpec, grid: &[u32]) -> Result<Vec<CurvePoint>, HarnessError> {
    Ok(Harness::default().sweep(spec, grid)?.points)
}

/// Validation report for a spec file; empty when the spec is usable.
pub fn validate_cmd(spec_path: &Path) -> Vec<String> {
    match ExperimentSpec::load(spec_path) {
        Ok(spec) => Harness::default().validate(&spec),
        Err(e) => vec![e.to_string()],
    }
}
