//! Update success and specificity under both metric regimes: per-token span
//! perplexity (open cloze) and candidate accuracy (multiple choice).

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backend::SpanScore;
use crate::injection::InjectionMethod;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot combine {0:?} with {1:?} metrics")]
    RegimeMismatch(Regime, Regime),
    #[error("specificity pools differ in size ({pre} before, {post} after)")]
    PoolMismatch { pre: usize, post: usize },
    #[error("specificity pool is empty")]
    EmptyPool,
    #[error("gold candidate '{0}' is missing from the scores")]
    GoldMissing(String),
    #[error("gold candidate '{0}' appears {1} times in the scores")]
    GoldDuplicated(String, usize),
    #[error("no records to aggregate")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Perplexity,
    Accuracy,
}

/// exp of the mean token NLL; the geometric mean of per-token perplexities.
pub fn per_token_perplexity(score: &SpanScore) -> f64 {
    score.mean_nll().exp()
}

/// A base metric value tagged with its regime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Metric {
    Perplexity(f64),
    Accuracy(f64),
}

impl Metric {
    pub fn regime(self) -> Regime {
        match self {
            Metric::Perplexity(_) => Regime::Perplexity,
            Metric::Accuracy(_) => Regime::Accuracy,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Metric::Perplexity(v) | Metric::Accuracy(v) => v,
        }
    }
}

/// post − pre. Negative is better for perplexity, positive for accuracy.
pub fn target_delta(pre: Metric, post: Metric) -> Result<f64, MetricsError> {
    if pre.regime() != post.regime() {
        return Err(MetricsError::RegimeMismatch(pre.regime(), post.regime()));
    }
    Ok(post.value() - pre.value())
}

/// Mean over the pool of (post − pre), pairing entries by position.
pub fn specificity_delta(pre: &[f64], post: &[f64]) -> Result<f64, MetricsError> {
    if pre.len() != post.len() {
        return Err(MetricsError::PoolMismatch {
            pre: pre.len(),
            post: post.len(),
        });
    }
    if pre.is_empty() {
        return Err(MetricsError::EmptyPool);
    }
    Ok(pre.iter().zip(post).map(|(a, b)| b - a).sum::<f64>() / pre.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McOutcome {
    pub correct: bool,
    /// 1 + number of candidates scoring strictly higher than the gold.
    pub rank: usize,
}

/// Ties with the gold do not push its rank down but do make it incorrect.
pub fn mc_outcome(scores: &[(String, f64)], gold: &str) -> Result<McOutcome, MetricsError> {
    let golds: Vec<f64> = scores.iter().filter(|(c, _)| c == gold).map(|(_, s)| *s).collect();
    let gold_score = match golds.as_slice() {
        [] => return Err(MetricsError::GoldMissing(gold.to_string())),
        [s] => *s,
        many => return Err(MetricsError::GoldDuplicated(gold.to_string(), many.len())),
    };
    let others = scores.iter().filter(|(c, _)| c != gold).map(|(_, s)| *s);
    let mut higher = 0;
    let mut tied = false;
    for s in others {
        if s > gold_score {
            higher += 1;
        } else if s == gold_score {
            tied = true;
        }
    }
    Ok(McOutcome {
        correct: higher == 0 && !tied,
        rank: higher + 1,
    })
}

/// Target-side metrics of one record; exactly one regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum TargetMetrics {
    Perplexity {
        pre_ppl: f64,
        post_ppl: f64,
    },
    Accuracy {
        pre_rank: usize,
        post_rank: usize,
        pre_correct: bool,
        post_correct: bool,
        candidate_count: usize,
    },
}

impl TargetMetrics {
    pub fn regime(&self) -> Regime {
        match self {
            TargetMetrics::Perplexity { .. } => Regime::Perplexity,
            TargetMetrics::Accuracy { .. } => Regime::Accuracy,
        }
    }

    /// Perplexity difference, or the change in correctness in percentage points.
    pub fn delta(&self) -> f64 {
        match *self {
            TargetMetrics::Perplexity { pre_ppl, post_ppl } => post_ppl - pre_ppl,
            TargetMetrics::Accuracy {
                pre_correct,
                post_correct,
                ..
            } => 100.0 * (f64::from(u8::from(post_correct)) - f64::from(u8::from(pre_correct))),
        }
    }
}

/// One (example, method, config) evaluation.
///
/// Specificity entries are per-pool-example perplexities, or 0/1
/// correctness for multiple choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub example_id: String,
    pub entity_id: String,
    pub method: String,
    pub injection: InjectionMethod,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u32>,
    pub target: TargetMetrics,
    pub specificity_pre: Vec<f64>,
    pub specificity_post: Vec<f64>,
    pub specificity_delta: f64,
    pub parameters_changed: bool,
    /// Gold span occurs verbatim in the definition.
    pub included: bool,
    pub similarity: BTreeMap<String, f64>,
}

impl EvalRecord {
    pub fn regime(&self) -> Regime {
        self.target.regime()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub method: String,
    pub regime: Regime,
    /// Mean post-update perplexity, or post-update accuracy in percent.
    pub target: f64,
    pub target_delta: f64,
    pub specificity: f64,
    pub specificity_delta: f64,
    pub n: usize,
    /// Base-model values of `target` and `specificity`.
    pub target_pre: f64,
    pub specificity_pre: f64,
}

/// Macro averages over records of one method. Accuracies are reported in
/// percent.
pub fn aggregate(records: &[EvalRecord]) -> Result<SummaryReport, MetricsError> {
    let first = records.first().ok_or(MetricsError::Empty)?;
    let regime = first.regime();
    if let Some(other) = records.iter().find(|r| r.regime() != regime) {
        return Err(MetricsError::RegimeMismatch(regime, other.regime()));
    }
    let n = records.len() as f64;
    let mean = |f: &dyn Fn(&EvalRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let scale = match regime {
        Regime::Perplexity => 1.0,
        Regime::Accuracy => 100.0,
    };
    let (pre, post) = match regime {
        Regime::Perplexity => (
            mean(&|r| match r.target {
                TargetMetrics::Perplexity { pre_ppl, .. } => pre_ppl,
                _ => unreachable!(),
            }),
            mean(&|r| match r.target {
                TargetMetrics::Perplexity { post_ppl, .. } => post_ppl,
                _ => unreachable!(),
            }),
        ),
        Regime::Accuracy => (
            100.0
                * mean(&|r| match r.target {
                    TargetMetrics::Accuracy { pre_correct, .. } => f64::from(u8::from(pre_correct)),
                    _ => unreachable!(),
                }),
            100.0
                * mean(&|r| match r.target {
                    TargetMetrics::Accuracy { post_correct, .. } => f64::from(u8::from(post_correct)),
                    _ => unreachable!(),
                }),
        ),
    };
    let pool_mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(SummaryReport {
        method: first.method.clone(),
        regime,
        target: post,
        target_delta: post - pre,
        specificity: scale * mean(&|r| pool_mean(&r.specificity_post)),
        specificity_delta: scale * mean(&|r| r.specificity_delta),
        n: records.len(),
        target_pre: pre,
        specificity_pre: scale * mean(&|r| pool_mean(&r.specificity_pre)),
    })
}

/// One report per method label, in order of first appearance.
pub fn aggregate_by_method(records: &[EvalRecord]) -> Result<Vec<SummaryReport>, MetricsError> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        if !groups.contains_key(r.method.as_str()) {
            order.push(&r.method);
        }
        groups.entry(&r.method).or_default().push(r.clone());
    }
    order.into_iter().map(|m| aggregate(&groups[m])).collect()
}

pub fn write_summary_csv<W: Write>(reports: &[SummaryReport], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "target",
        "target_delta",
        "specificity",
        "specificity_delta",
        "n",
    ])?;
    for r in reports {
        w.write_record([
            r.method.clone(),
            format!("{:.4}", r.target),
            format!("{:.4}", r.target_delta),
            format!("{:.4}", r.specificity),
            format!("{:.4}", r.specificity_delta),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(x: f64) -> f64 {
        x.ln()
    }

    #[test]
    fn perplexity_examples() {
        let s = SpanScore::new(vec![ln(8.0); 3]).unwrap();
        assert!((per_token_perplexity(&s) - 8.0).abs() < 1e-12);
        let s = SpanScore::new(vec![0.0, ln(4.0), ln(16.0)]).unwrap();
        assert!((per_token_perplexity(&s) - 4.0).abs() < 1e-12);
        assert_eq!(per_token_perplexity(&SpanScore::new(vec![0.0]).unwrap()), 1.0);
    }

    #[test]
    fn deltas() {
        let d = target_delta(Metric::Perplexity(38.8), Metric::Perplexity(36.8)).unwrap();
        assert!((d + 2.0).abs() < 1e-9);
        assert_eq!(
            target_delta(Metric::Perplexity(5.0), Metric::Perplexity(5.0)).unwrap(),
            0.0
        );
        let d = target_delta(Metric::Accuracy(34.1), Metric::Accuracy(57.7)).unwrap();
        assert!((d - 23.6).abs() < 1e-9);
        assert!(matches!(
            target_delta(Metric::Accuracy(1.0), Metric::Perplexity(1.0)),
            Err(MetricsError::RegimeMismatch(..))
        ));
    }

    #[test]
    fn specificity_examples() {
        assert_eq!(specificity_delta(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(specificity_delta(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.0);
        let d = specificity_delta(&[26.0, 30.0], &[28.1, 32.1]).unwrap();
        assert!((d - 2.1).abs() < 1e-9);
        assert!(matches!(
            specificity_delta(&[1.0], &[1.0, 2.0]),
            Err(MetricsError::PoolMismatch { pre: 1, post: 2 })
        ));
    }

    fn scores(items: &[(&str, f64)]) -> Vec<(String, f64)> {
        items.iter().map(|(c, s)| (c.to_string(), *s)).collect()
    }

    #[test]
    fn outcomes_and_ties() {
        let o = mc_outcome(&scores(&[("g", -1.0), ("a", -2.0), ("b", -3.0)]), "g").unwrap();
        assert_eq!(o, McOutcome { correct: true, rank: 1 });
        let o = mc_outcome(&scores(&[("g", -1.0), ("a", -1.0)]), "g").unwrap();
        assert_eq!(
            o,
            McOutcome {
                correct: false,
                rank: 1
            }
        );
        let o = mc_outcome(&scores(&[("a", -1.0), ("b", -2.0), ("g", -3.0)]), "g").unwrap();
        assert_eq!(
            o,
            McOutcome {
                correct: false,
                rank: 3
            }
        );
        assert!(matches!(
            mc_outcome(&scores(&[("a", 0.0)]), "g"),
            Err(MetricsError::GoldMissing(_))
        ));
        assert!(matches!(
            mc_outcome(&scores(&[("g", 0.0), ("g", 1.0)]), "g"),
            Err(MetricsError::GoldDuplicated(_, 2))
        ));
    }

    fn ppl_record(pre: f64, post: f64) -> EvalRecord {
        EvalRecord {
            example_id: "e".into(),
            entity_id: "x".into(),
            method: "ft_full".into(),
            injection: InjectionMethod::FtFull,
            config_digest: "d".into(),
            epochs: None,
            target: TargetMetrics::Perplexity {
                pre_ppl: pre,
                post_ppl: post,
            },
            specificity_pre: vec![1.0],
            specificity_post: vec![1.5],
            specificity_delta: 0.5,
            parameters_changed: true,
            included: false,
            similarity: BTreeMap::new(),
        }
    }

    fn acc_record(pre: bool, post: bool) -> EvalRecord {
        EvalRecord {
            target: TargetMetrics::Accuracy {
                pre_rank: 2,
                post_rank: 1,
                pre_correct: pre,
                post_correct: post,
                candidate_count: 3,
            },
            ..ppl_record(0.0, 0.0)
        }
    }

    #[test]
    fn aggregation() {
        let r = aggregate(&[ppl_record(3.0, 2.0), ppl_record(9.0, 8.0)]).unwrap();
        assert_eq!(r.target, 5.0);
        assert_eq!(r.target_delta, -1.0);
        assert_eq!(r.specificity_delta, 0.5);

        let r = aggregate(&[
            acc_record(false, true),
            acc_record(false, false),
            acc_record(true, true),
        ])
        .unwrap();
        assert!((r.target - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(format!("{:.1}", r.target), "66.7");
        assert!((r.target_delta - 100.0 / 3.0).abs() < 1e-9);

        let single = ppl_record(4.0, 3.5);
        let r = aggregate(std::slice::from_ref(&single)).unwrap();
        assert_eq!((r.target, r.target_delta, r.n), (3.5, -0.5, 1));

        assert!(matches!(aggregate(&[]), Err(MetricsError::Empty)));
        assert!(matches!(
            aggregate(&[ppl_record(1.0, 1.0), acc_record(true, true)]),
            Err(MetricsError::RegimeMismatch(..))
        ));
    }

    #[test]
    fn summary_csv_layout() {
        let reports = aggregate_by_method(&[ppl_record(3.0, 2.0)]).unwrap();
        let mut out = Vec::new();
        write_summary_csv(&reports, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("method,target,target_delta,specificity,specificity_delta,n\n"));
        assert!(text.contains("ft_full,2.0000,-1.0000,1.5000,0.5000,1"));
    }
}
