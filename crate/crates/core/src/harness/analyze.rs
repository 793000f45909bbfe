use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plots::{emit_plots, Figure};
use super::run::ResultSet;
use super::spec::OUTPUT_DIR_ENV;
use super::HarnessError;
use crate::analysis::{
    bin_by_similarity, methods_in_order, record_change, require_regime, similarity_pairs, summarize_strata,
    write_bins_csv, write_curve_csv, write_delta_rank_csv, write_strata_csv, BaseReference, CurvePoint, Stratum,
};
use crate::metrics::{aggregate, aggregate_by_method, write_summary_csv, EvalRecord, Regime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    Summary,
    Inclusion,
    SimilarityBins,
    DeltaRank,
    Curve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    /// Regime the results must be in.
    #[serde(default)]
    pub regime: Option<Regime>,
    #[serde(default = "default_analyses")]
    pub analyses: Vec<AnalysisKind>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_measures")]
    pub measures: Vec<String>,
    #[serde(default = "default_plots")]
    pub plots: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_analyses() -> Vec<AnalysisKind> {
    vec![
        AnalysisKind::Summary,
        AnalysisKind::Inclusion,
        AnalysisKind::SimilarityBins,
    ]
}

fn default_bins() -> usize {
    4
}

fn default_measures() -> Vec<String> {
    vec!["jaccard".into(), "rouge_l".into(), "hash-bow".into()]
}

fn default_plots() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("analysis")
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        toml::from_str("").expect("every field has a default")
    }
}

impl AnalysisSpec {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut spec: AnalysisSpec = toml::from_str(&text).map_err(|e| HarnessError::Spec(e.to_string()))?;
        spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(spec)
    }

    pub fn output_path(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir).join("analysis"),
            _ if self.output_dir.is_absolute() => self.output_dir.clone(),
            _ => self.base_dir.join(&self.output_dir),
        }
    }
}

/// Load results and an analysis spec, then write every requested output.
pub fn analyze_cmd(results: &Path, analysis_spec: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let set = ResultSet::load(results)?;
    let spec = AnalysisSpec::load(analysis_spec)?;
    analyze(&set, &spec, &spec.output_path())
}

fn regime_of(records: &[EvalRecord]) -> Result<Regime, HarnessError> {
    let r = records.first().ok_or(HarnessError::NoRecords)?.regime();
    require_regime(records, r)?;
    Ok(r)
}

fn create(path: &Path) -> Result<File, HarnessError> {
    File::create(path).map_err(|e| HarnessError::io(path, e))
}

pub fn analyze(set: &ResultSet, spec: &AnalysisSpec, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let records = &set.records;
    let regime = regime_of(records)?;
    if let Some(expected) = spec.regime {
        require_regime(records, expected)?;
    }
    for kind in &spec.analyses {
        if *kind == AnalysisKind::DeltaRank {
            require_regime(records, Regime::Accuracy)?;
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let change_label = match regime {
        Regime::Perplexity => "percent change in perplexity",
        Regime::Accuracy => "change in gold rank",
    };
    let mut files = Vec::new();
    let mut figures = Vec::new();

    for kind in &spec.analyses {
        match kind {
            AnalysisKind::Summary => {
                let path = out_dir.join("summary.csv");
                write_summary_csv(&aggregate_by_method(records)?, create(&path)?)?;
                files.push(path);
            }
            AnalysisKind::Inclusion => {
                let path = out_dir.join("strata.csv");
                write_strata_csv(&summarize_strata(records)?, create(&path)?)?;
                files.push(path);
                let mut groups = Vec::new();
                for method in methods_in_order(records) {
                    for stratum in [Stratum::Included, Stratum::NotIncluded] {
                        let values = records
                            .iter()
                            .filter(|r| r.method == method && Stratum::of(r.included) == stratum)
                            .map(record_change)
                            .collect::<Result<Vec<_>, _>>()?;
                        groups.push((format!("{method}/{}", stratum.as_str()), values));
                    }
                }
                figures.push((
                    "strata".to_string(),
                    Figure::Distribution {
                        title: "Change by inclusion of the gold span".into(),
                        y_label: change_label.into(),
                        groups,
                    },
                ));
            }
            AnalysisKind::SimilarityBins => {
                for measure in &spec.measures {
                    let path = out_dir.join(format!("bins_{measure}.csv"));
                    let mut out = Vec::new();
                    let mut groups = Vec::new();
                    let mut wrote_header = false;
                    for method in methods_in_order(records) {
                        let subset: Vec<EvalRecord> = records.iter().filter(|r| r.method == method).cloned().collect();
                        let pairs = similarity_pairs(&subset, measure)?;
                        let bins = bin_by_similarity(&pairs, spec.bins.min(pairs.len()))?;
                        let mut buf = Vec::new();
                        write_bins_csv(&method, &bins, &mut buf)?;
                        let text = String::from_utf8(buf).expect("csv is utf-8");
                        let body = if wrote_header {
                            text.split_once('\n').map(|(_, b)| b).unwrap_or_default()
                        } else {
                            &text
                        };
                        out.extend_from_slice(body.as_bytes());
                        wrote_header = true;
                        for b in &bins {
                            groups.push((format!("{method}/{:.2}-{:.2}", b.low, b.high), b.deltas()));
                        }
                    }
                    std::fs::write(&path, out).map_err(|e| HarnessError::io(&path, e))?;
                    files.push(path);
                    figures.push((
                        format!("bins_{measure}"),
                        Figure::Distribution {
                            title: format!("Change by {measure} similarity bin"),
                            y_label: change_label.into(),
                            groups,
                        },
                    ));
                }
            }
            AnalysisKind::DeltaRank => {
                let path = out_dir.join("delta_rank.csv");
                write_delta_rank_csv(records, create(&path)?)?;
                files.push(path);
                let groups = methods_in_order(records)
                    .into_iter()
                    .map(|m| {
                        let v = records
                            .iter()
                            .filter(|r| r.method == m)
                            .map(record_change)
                            .collect::<Result<Vec<_>, _>>()?;
                        Ok((m, v))
                    })
                    .collect::<Result<Vec<_>, HarnessError>>()?;
                figures.push((
                    "delta_rank".to_string(),
                    Figure::Distribution {
                        title: "Change in gold rank".into(),
                        y_label: "post rank - pre rank".into(),
                        groups,
                    },
                ));
            }
            AnalysisKind::Curve => {
                let (points, base) = curve_from_records(records)?;
                let path = out_dir.join("curve.csv");
                write_curve_csv(&points, create(&path)?)?;
                files.push(path);
                figures.push(("tradeoff".to_string(), tradeoff_figure(points, base, regime)));
            }
        }
    }
    if spec.plots && !figures.is_empty() {
        files.extend(emit_plots(&figures, out_dir)?);
    }
    Ok(files)
}

pub fn tradeoff_figure(points: Vec<CurvePoint>, base: BaseReference, regime: Regime) -> Figure {
    let (t, s) = match regime {
        Regime::Perplexity => ("target perplexity", "specificity perplexity"),
        Regime::Accuracy => ("target accuracy (%)", "specificity accuracy (%)"),
    };
    Figure::Tradeoff {
        points,
        base,
        target_label: t.into(),
        specificity_label: s.into(),
    }
}

/// Curve points from sweep records grouped by (method, epochs), with the
/// base reference taken from the pre-update metrics.
pub fn curve_from_records(records: &[EvalRecord]) -> Result<(Vec<CurvePoint>, BaseReference), HarnessError> {
    let mut groups: BTreeMap<(usize, u32), Vec<EvalRecord>> = BTreeMap::new();
    let methods = methods_in_order(records);
    for r in records {
        let Some(e) = r.epochs else { continue };
        let m = methods.iter().position(|m| *m == r.method).expect("listed");
        groups.entry((m, e)).or_default().push(r.clone());
    }
    if groups.is_empty() {
        return Err(HarnessError::Spec(
            "curve analysis needs records with an epoch count".into(),
        ));
    }
    let mut points = Vec::new();
    let mut base = None;
    for ((_, epochs), recs) in &groups {
        let report = aggregate(recs)?;
        base.get_or_insert(BaseReference::from_summary(&report));
        points.push(CurvePoint::from_summary(*epochs, &report));
    }
    Ok((points, base.expect("non-empty")))
}
