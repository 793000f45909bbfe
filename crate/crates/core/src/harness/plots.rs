use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::HarnessError;
use crate::analysis::{BaseReference, CurvePoint};

/// A figure to render as SVG.
#[derive(Clone, Debug, PartialEq)]
pub enum Figure {
    /// Target against specificity per method, with the base model drawn as
    /// a dotted horizontal and a dotted vertical line.
    Tradeoff {
        points: Vec<CurvePoint>,
        base: BaseReference,
        target_label: String,
        specificity_label: String,
    },
    /// One box summary per named group.
    Distribution {
        title: String,
        y_label: String,
        groups: Vec<(String, Vec<f64>)>,
    },
}

fn plot_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Plot(e.to_string())
}

/// Write one `<name>.svg` per figure into `out_dir`.
pub fn emit_plots(figures: &[(String, Figure)], out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if figures.is_empty() {
        return Err(HarnessError::EmptyPlotInput);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut out = Vec::new();
    for (name, fig) in figures {
        let path = out_dir.join(format!("{name}.svg"));
        match fig {
            Figure::Tradeoff {
                points,
                base,
                target_label,
                specificity_label,
            } => draw_tradeoff(&path, points, *base, target_label, specificity_label)?,
            Figure::Distribution { title, y_label, groups } => draw_distribution(&path, title, y_label, groups)?,
        }
        out.push(path);
    }
    Ok(out)
}

fn padded(lo: f64, hi: f64) -> std::ops::Range<f64> {
    let span = (hi - lo).abs().max(1e-6);
    (lo - 0.08 * span)..(hi + 0.08 * span)
}

fn draw_tradeoff(
    path: &Path,
    points: &[CurvePoint],
    base: BaseReference,
    target_label: &str,
    specificity_label: &str,
) -> Result<(), HarnessError> {
    if points.is_empty() {
        return Err(HarnessError::EmptyPlotInput);
    }
    let xs = points.iter().map(|p| p.specificity_metric).chain([base.specificity]);
    let ys = points.iter().map(|p| p.target_metric).chain([base.target]);
    let x = padded(
        xs.clone().fold(f64::INFINITY, f64::min),
        xs.fold(f64::NEG_INFINITY, f64::max),
    );
    let y = padded(
        ys.clone().fold(f64::INFINITY, f64::min),
        ys.fold(f64::NEG_INFINITY, f64::max),
    );

    let root = SVGBackend::new(path, (800, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Target vs. specificity by epochs", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(45)
        .y_label_area_size(65)
        .build_cartesian_2d(x.clone(), y.clone())
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(specificity_label)
        .y_desc(target_label)
        .draw()
        .map_err(plot_err)?;

    let mut methods: Vec<&str> = Vec::new();
    for p in points {
        if !methods.contains(&p.method.as_str()) {
            methods.push(&p.method);
        }
    }
    for (i, method) in methods.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let mut series: Vec<&CurvePoint> = points.iter().filter(|p| p.method == *method).collect();
        series.sort_by_key(|p| p.epochs);
        let coords: Vec<(f64, f64)> = series.iter().map(|p| (p.specificity_metric, p.target_metric)).collect();
        chart
            .draw_series(LineSeries::new(coords.clone(), color.stroke_width(1)))
            .map_err(plot_err)?
            .label(*method)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart
            .draw_series(coords.iter().map(|c| Circle::new(*c, 4, color.filled())))
            .map_err(plot_err)?;
    }
    let dotted = BLACK.mix(0.7).stroke_width(1);
    chart
        .draw_series(DashedLineSeries::new(
            vec![(x.start, base.target), (x.end, base.target)],
            2,
            5,
            dotted,
        ))
        .map_err(plot_err)?
        .label("base model")
        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], dotted));
    chart
        .draw_series(DashedLineSeries::new(
            vec![(base.specificity, y.start), (base.specificity, y.end)],
            2,
            5,
            dotted,
        ))
        .map_err(plot_err)?;
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn draw_distribution(
    path: &Path,
    title: &str,
    y_label: &str,
    groups: &[(String, Vec<f64>)],
) -> Result<(), HarnessError> {
    let groups: Vec<&(String, Vec<f64>)> = groups.iter().filter(|g| !g.1.is_empty()).collect();
    if groups.is_empty() {
        return Err(HarnessError::EmptyPlotInput);
    }
    let all = groups.iter().flat_map(|g| g.1.iter().copied());
    let lo = all.clone().fold(f64::INFINITY, f64::min);
    let hi = all.fold(f64::NEG_INFINITY, f64::max);
    let y = padded(lo, hi);
    let labels: Vec<String> = groups.iter().map(|g| g.0.clone()).collect();

    let width = (160 * labels.len() as u32).clamp(480, 1600);
    let root = SVGBackend::new(path, (width, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(45)
        .y_label_area_size(65)
        .build_cartesian_2d(labels[..].into_segmented(), (y.start as f32)..(y.end as f32))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(groups.iter().enumerate().map(|(i, (_, values))| {
            Boxplot::new_vertical(SegmentValue::CenterOf(&labels[i]), &Quartiles::new(values))
                .width(30)
                .style(Palette99::pick(i))
                .whisker_width(0.5)
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}
