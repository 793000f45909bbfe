//! Post-hoc analyses over evaluation records: inclusion strata, similarity
//! bins, per-example change statistics and tradeoff curves.

mod similarity;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use similarity::{
    jaccard, probe_definition_similarity, rouge_l, rouge_l_scores, semantic_sim, HashBowScorer, RougeL, ScorerRegistry,
    SemanticScorer,
};

use crate::corpus::{gold_in_definition, Corpus, ProbeExample};
use crate::metrics::{EvalRecord, Regime, SummaryReport, TargetMetrics};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("semantic scorer '{0}' is not registered")]
    ScorerMissing(String),
    #[error("cannot make {k} bins from {n} records")]
    TooManyBins { k: usize, n: usize },
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("percent change needs a positive base value, got {0}")]
    NonPositiveBase(f64),
    #[error("similarity score is not a number")]
    NanScore,
    #[error("analysis expects {expected:?} records but found {found:?}")]
    RegimeMismatch { expected: Regime, found: Regime },
    #[error("record lacks similarity measure '{0}'")]
    MissingMeasure(String),
    #[error("no records to analyze")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Included,
    NotIncluded,
}

impl Stratum {
    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Included => "included",
            Stratum::NotIncluded => "not_included",
        }
    }

    pub fn of(included: bool) -> Self {
        if included {
            Stratum::Included
        } else {
            Stratum::NotIncluded
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stratification {
    pub included: Vec<ProbeExample>,
    pub not_included: Vec<ProbeExample>,
}

/// Split a corpus by whether each gold span occurs verbatim in its entity's
/// definition.
pub fn stratify_inclusion(corpus: &Corpus) -> Stratification {
    let mut out = Stratification::default();
    for ex in &corpus.examples {
        if gold_in_definition(ex, corpus.entity_of(ex)) {
            out.included.push(ex.clone());
        } else {
            out.not_included.push(ex.clone());
        }
    }
    out
}

/// 100 · (post − pre) / pre.
pub fn percent_change(pre: f64, post: f64) -> Result<f64, AnalysisError> {
    if pre.is_nan() || pre <= 0.0 {
        return Err(AnalysisError::NonPositiveBase(pre));
    }
    Ok(100.0 * (post - pre) / pre)
}

/// post − pre; negative means the gold moved up.
pub fn delta_rank(pre_rank: usize, post_rank: usize) -> i64 {
    post_rank as i64 - pre_rank as i64
}

/// The per-example change used by the stratified and binned analyses:
/// percent change in perplexity, or the rank delta of the gold candidate.
pub fn record_change(r: &EvalRecord) -> Result<f64, AnalysisError> {
    match r.target {
        TargetMetrics::Perplexity { pre_ppl, post_ppl } => percent_change(pre_ppl, post_ppl),
        TargetMetrics::Accuracy {
            pre_rank, post_rank, ..
        } => Ok(delta_rank(pre_rank, post_rank) as f64),
    }
}

pub fn require_regime(records: &[EvalRecord], expected: Regime) -> Result<(), AnalysisError> {
    match records.iter().find(|r| r.regime() != expected) {
        Some(r) => Err(AnalysisError::RegimeMismatch {
            expected,
            found: r.regime(),
        }),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub method: String,
    pub stratum: Stratum,
    pub n: usize,
    pub mean_change: f64,
    pub median_change: f64,
}

/// Mean and median per-example change per (method, stratum), methods in
/// order of first appearance. Empty strata are omitted.
pub fn summarize_strata(records: &[EvalRecord]) -> Result<Vec<StratumSummary>, AnalysisError> {
    let mut out = Vec::new();
    for method in methods_in_order(records) {
        for stratum in [Stratum::Included, Stratum::NotIncluded] {
            let changes = records
                .iter()
                .filter(|r| r.method == method && Stratum::of(r.included) == stratum)
                .map(record_change)
                .collect::<Result<Vec<f64>, _>>()?;
            if changes.is_empty() {
                continue;
            }
            out.push(StratumSummary {
                method: method.clone(),
                stratum,
                n: changes.len(),
                mean_change: mean(&changes),
                median_change: median(&changes),
            });
        }
    }
    Ok(out)
}

/// One quantile bin. `low` and `high` are the smallest and largest scores
/// it holds, so both ends are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBin {
    pub bin_index: usize,
    pub low: f64,
    pub high: f64,
    /// (similarity, delta) pairs in input order.
    pub records: Vec<(f64, f64)>,
}

impl SimilarityBin {
    pub fn deltas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.1).collect()
    }
}

/// Equal-count bins by ascending similarity. The first `n mod k` bins get
/// one extra record; ties are broken by input position.
pub fn bin_by_similarity(records: &[(f64, f64)], k: usize) -> Result<Vec<SimilarityBin>, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::ZeroBins);
    }
    let n = records.len();
    if n == 0 {
        return Err(AnalysisError::Empty);
    }
    if k > n {
        return Err(AnalysisError::TooManyBins { k, n });
    }
    if records.iter().any(|r| r.0.is_nan()) {
        return Err(AnalysisError::NanScore);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| records[a].0.total_cmp(&records[b].0).then(a.cmp(&b)));
    let (base, extra) = (n / k, n % k);
    let mut bins = Vec::with_capacity(k);
    let mut at = 0;
    for bin_index in 0..k {
        let size = base + usize::from(bin_index < extra);
        let mut members: Vec<usize> = order[at..at + size].to_vec();
        at += size;
        let low = records[members[0]].0;
        let high = records[*members.last().expect("non-empty")].0;
        members.sort_unstable();
        bins.push(SimilarityBin {
            bin_index,
            low,
            high,
            records: members.into_iter().map(|i| records[i]).collect(),
        });
    }
    Ok(bins)
}

/// (similarity, change) pairs of `records` under one measure.
pub fn similarity_pairs(records: &[EvalRecord], measure: &str) -> Result<Vec<(f64, f64)>, AnalysisError> {
    records
        .iter()
        .map(|r| {
            let s = *r
                .similarity
                .get(measure)
                .ok_or_else(|| AnalysisError::MissingMeasure(measure.to_string()))?;
            Ok((s, record_change(r)?))
        })
        .collect()
}

/// One point of an epoch sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epochs: u32,
    pub target_metric: f64,
    pub specificity_metric: f64,
    pub method: String,
}

impl CurvePoint {
    pub fn from_summary(epochs: u32, report: &SummaryReport) -> Self {
        Self {
            epochs,
            target_metric: report.target,
            specificity_metric: report.specificity,
            method: report.method.clone(),
        }
    }
}

/// Base-model target and specificity, drawn as reference lines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseReference {
    pub target: f64,
    pub specificity: f64,
}

impl BaseReference {
    pub fn from_summary(report: &SummaryReport) -> Self {
        Self {
            target: report.target_pre,
            specificity: report.specificity_pre,
        }
    }
}

pub fn write_strata_csv<W: Write>(rows: &[StratumSummary], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "stratum", "n", "mean_change", "median_change"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.stratum.as_str().to_string(),
            r.n.to_string(),
            format!("{:.4}", r.mean_change),
            format!("{:.4}", r.median_change),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bins_csv<W: Write>(method: &str, bins: &[SimilarityBin], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "bin_index", "low", "high", "n", "mean_delta", "median_delta"])?;
    for b in bins {
        let d = b.deltas();
        w.write_record([
            method.to_string(),
            b.bin_index.to_string(),
            format!("{:.4}", b.low),
            format!("{:.4}", b.high),
            d.len().to_string(),
            format!("{:.4}", mean(&d)),
            format!("{:.4}", median(&d)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "epochs", "target", "specificity"])?;
    for p in points {
        w.write_record([
            p.method.clone(),
            p.epochs.to_string(),
            format!("{:.6}", p.target_metric),
            format!("{:.6}", p.specificity_metric),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-example rank deltas of multiple-choice records.
pub fn write_delta_rank_csv<W: Write>(records: &[EvalRecord], out: W) -> Result<(), AnalysisError> {
    require_regime(records, Regime::Accuracy)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "example_id", "stratum", "pre_rank", "post_rank", "delta_rank"])?;
    for r in records {
        if let TargetMetrics::Accuracy {
            pre_rank, post_rank, ..
        } = r.target
        {
            w.write_record([
                r.method.clone(),
                r.example_id.clone(),
                Stratum::of(r.included).as_str().to_string(),
                pre_rank.to_string(),
                post_rank.to_string(),
                delta_rank(pre_rank, post_rank).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn methods_in_order(records: &[EvalRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        if !out.contains(&r.method) {
            out.push(r.method.clone());
        }
    }
    out
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}
