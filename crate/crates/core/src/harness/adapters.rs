use std::collections::BTreeMap;
use std::sync::Arc;

use super::spec::{ExperimentSpec, RuntimeSpec};
use super::HarnessError;
use crate::backend::{ModelFamily, RuntimeFactory};
use crate::corpus::Corpus;
use crate::toy::{make_uniform_model, TableFactory, TableModel, TinyConfig, TinyFactory, WordTokenizer};

/// Texts an adapter may need to size its vocabulary.
pub struct AdapterInputs<'a> {
    pub spec: &'a ExperimentSpec,
    pub corpus: &'a Corpus,
    pub pool_source: &'a Corpus,
}

impl AdapterInputs<'_> {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        [self.corpus, self.pool_source].into_iter().flat_map(|c| {
            c.entities
                .values()
                .map(|e| e.definition.as_str())
                .chain(c.examples.iter().flat_map(|ex| {
                    [ex.probe.as_str(), ex.gold_span.as_str()]
                        .into_iter()
                        .chain(ex.candidates.iter().flatten().map(String::as_str))
                }))
        })
    }
}

/// Turns the `[runtime]` section into a factory of model replicas.
pub trait RuntimeAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn factory(
        &self,
        runtime: &RuntimeSpec,
        inputs: &AdapterInputs<'_>,
    ) -> Result<Box<dyn RuntimeFactory>, HarnessError>;
}

#[derive(Clone)]
pub struct AdapterRegistry {
    adapters: BTreeMap<String, Arc<dyn RuntimeAdapter>>,
}

impl Default for AdapterRegistry {
    /// The in-tree adapters: `uniform`, `table` and `tiny`.
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(UniformAdapter));
        r.register(Arc::new(TableAdapter));
        r.register(Arc::new(TinyAdapter));
        r
    }
}

impl AdapterRegistry {
    pub fn empty() -> Self {
        Self {
            adapters: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, adapter: Arc<dyn RuntimeAdapter>) {
        self.adapters.insert(adapter.name().to_string(), adapter);
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn RuntimeAdapter>> {
        self.adapters.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.adapters.keys().map(String::as_str)
    }
}

pub struct UniformAdapter;

impl RuntimeAdapter for UniformAdapter {
    fn name(&self) -> &str {
        "uniform"
    }

    fn factory(&self, runtime: &RuntimeSpec, _: &AdapterInputs<'_>) -> Result<Box<dyn RuntimeFactory>, HarnessError> {
        let k = runtime
            .vocab_size
            .ok_or_else(|| HarnessError::Spec("uniform runtime needs vocab_size".into()))?;
        Ok(Box::new(TableFactory::new("uniform", make_uniform_model(k)?)))
    }
}

pub struct TableAdapter;

impl RuntimeAdapter for TableAdapter {
    fn name(&self) -> &str {
        "table"
    }

    fn factory(
        &self,
        runtime: &RuntimeSpec,
        inputs: &AdapterInputs<'_>,
    ) -> Result<Box<dyn RuntimeFactory>, HarnessError> {
        let path = runtime
            .path
            .as_ref()
            .ok_or_else(|| HarnessError::Spec("table runtime needs path".into()))?;
        let path = inputs.spec.runtime_path(path);
        if !path.exists() {
            return Err(HarnessError::MissingPath(path));
        }
        Ok(Box::new(TableFactory::new("table", TableModel::load(&path)?)))
    }
}

pub struct TinyAdapter;

impl RuntimeAdapter for TinyAdapter {
    fn name(&self) -> &str {
        "tiny"
    }

    fn factory(
        &self,
        runtime: &RuntimeSpec,
        inputs: &AdapterInputs<'_>,
    ) -> Result<Box<dyn RuntimeFactory>, HarnessError> {
        let mut config = TinyConfig::new(runtime.family.unwrap_or(ModelFamily::LeftToRight));
        if let Some(h) = runtime.hidden {
            config.hidden = h;
        }
        if let Some(l) = runtime.layers {
            config.layers = l;
        }
        if let Some(s) = runtime.init_seed {
            config.init_seed = s;
        }
        let tokenizer = WordTokenizer::from_texts(inputs.texts());
        let factory = TinyFactory::new(config, tokenizer);
        factory.build()?;
        Ok(Box::new(factory))
    }
}
