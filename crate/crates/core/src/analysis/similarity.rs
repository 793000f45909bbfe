//! Lexical and embedding similarity between probe and definition.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::AnalysisError;
use crate::text::{lexical_tokens, MASK};

/// |A ∩ B| / |A ∪ B| over lowercased word-token sets; 0 when both are empty.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let a: BTreeSet<String> = lexical_tokens(a).into_iter().collect();
    let b: BTreeSet<String> = lexical_tokens(b).into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RougeL {
    pub lcs: usize,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// ROUGE-L of `candidate` against `reference`: precision is LCS over the
/// candidate length, recall LCS over the reference length.
pub fn rouge_l_scores(reference: &str, candidate: &str) -> RougeL {
    let r = lexical_tokens(reference);
    let c = lexical_tokens(candidate);
    let lcs = lcs_len(&r, &c);
    if lcs == 0 {
        return RougeL {
            lcs,
            precision: 0.0,
            recall: 0.0,
            f: 0.0,
        };
    }
    let precision = lcs as f64 / c.len() as f64;
    let recall = lcs as f64 / r.len() as f64;
    RougeL {
        lcs,
        precision,
        recall,
        f: 2.0 * precision * recall / (precision + recall),
    }
}

/// ROUGE-L F-measure; symmetric in its arguments.
pub fn rouge_l(a: &str, b: &str) -> f64 {
    rouge_l_scores(a, b).f
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// A pluggable sentence-similarity model.
pub trait SemanticScorer: Send + Sync {
    fn name(&self) -> &str;
    fn similarity(&self, a: &str, b: &str) -> f64;
}

/// Cosine between bag-of-words count vectors whose coordinates are sha256
/// buckets of the lowercased tokens. Deterministic and dependency free.
#[derive(Clone, Copy, Debug)]
pub struct HashBowScorer {
    pub dims: usize,
}

impl Default for HashBowScorer {
    fn default() -> Self {
        Self { dims: 512 }
    }
}

impl HashBowScorer {
    pub const NAME: &'static str = "hash-bow";

    pub fn bucket(&self, token: &str) -> usize {
        let h = Sha256::digest(token.as_bytes());
        let mut b = [0u8; 8];
        b.copy_from_slice(&h[..8]);
        (u64::from_le_bytes(b) % self.dims as u64) as usize
    }

    pub fn embed(&self, text: &str) -> BTreeMap<usize, f64> {
        let mut v = BTreeMap::new();
        for t in lexical_tokens(text) {
            *v.entry(self.bucket(&t)).or_insert(0.0) += 1.0;
        }
        v
    }
}

impl SemanticScorer for HashBowScorer {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn similarity(&self, a: &str, b: &str) -> f64 {
        let (va, vb) = (self.embed(a), self.embed(b));
        let dot: f64 = va.iter().filter_map(|(k, x)| vb.get(k).map(|y| x * y)).sum();
        let norm = |v: &BTreeMap<usize, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
        let denom = norm(&va) * norm(&vb);
        if denom == 0.0 {
            0.0
        } else {
            (dot / denom).min(1.0)
        }
    }
}

#[derive(Clone)]
pub struct ScorerRegistry {
    scorers: BTreeMap<String, Arc<dyn SemanticScorer>>,
}

impl Default for ScorerRegistry {
    /// Registry holding the hash bag-of-words scorer.
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(HashBowScorer::default()));
        r
    }
}

impl ScorerRegistry {
    pub fn empty() -> Self {
        Self {
            scorers: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, scorer: Arc<dyn SemanticScorer>) {
        self.scorers.insert(scorer.name().to_string(), scorer);
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn SemanticScorer>> {
        self.scorers.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.scorers.keys().map(String::as_str)
    }
}

pub fn semantic_sim(a: &str, b: &str, registry: &ScorerRegistry, scorer: &str) -> Result<f64, AnalysisError> {
    let s = registry
        .get(scorer)
        .ok_or_else(|| AnalysisError::ScorerMissing(scorer.to_string()))?;
    Ok(s.similarity(a, b))
}

/// Every similarity measure between a probe and a definition, keyed by
/// measure name. The mask placeholder is dropped from the probe first.
pub fn probe_definition_similarity(probe: &str, definition: &str, registry: &ScorerRegistry) -> BTreeMap<String, f64> {
    let probe = probe.replace(MASK, " ");
    let mut out = BTreeMap::new();
    out.insert("jaccard".to_string(), jaccard(&probe, definition));
    out.insert("rouge_l".to_string(), rouge_l(&probe, definition));
    for name in registry.names() {
        let s = registry.get(name).expect("listed").similarity(&probe, definition);
        out.insert(name.to_string(), s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard("The storm hit.", "the storm HIT"), 1.0);
        assert_eq!(jaccard("a b", "c d"), 0.0);
        assert_eq!(jaccard("a b c", "b c d"), 0.5);
        assert_eq!(jaccard("", " "), 0.0);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l("x y z", "x y z"), 1.0);
        assert_eq!(rouge_l("x y", "z w"), 0.0);
        let r = rouge_l_scores("a b c d", "a c");
        assert_eq!(r.lcs, 2);
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
        assert!((r.f - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_l("a c", "a b c d"), r.f);
    }

    #[test]
    fn lcs_is_not_substring() {
        assert_eq!(lcs_len(&[1, 2, 3, 4, 5], &[1, 9, 3, 9, 5]), 3);
        assert_eq!(lcs_len::<u8>(&[], &[1]), 0);
    }

    #[test]
    fn hash_bow_scorer() {
        let reg = ScorerRegistry::default();
        let s = semantic_sim("storm in Fiji", "storm in Fiji", &reg, "hash-bow").unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        let h = HashBowScorer::default();
        let (a, b) = ("alpha", "beta");
        assert_ne!(h.bucket(a), h.bucket(b));
        assert_eq!(h.similarity(a, b), 0.0);
        assert!(matches!(
            semantic_sim("a", "b", &reg, "bert-score"),
            Err(AnalysisError::ScorerMissing(_))
        ));
    }

    #[test]
    fn mask_is_ignored() {
        let reg = ScorerRegistry::default();
        let sims = probe_definition_similarity("Nana hit <MASK> .", "Nana hit Belize .", &reg);
        assert_eq!(sims["jaccard"], 2.0 / 3.0);
        assert_eq!(sims.len(), 3);
    }
}
