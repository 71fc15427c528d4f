//! Per-k curves: one CSV for every measure, and SVG line plots.

use std::io::Write;
use std::path::Path;

use plotters::prelude::*;

use super::report::{MetricsFile, ModelRun};
use super::{ABSOLUTE, ABSOLUTE_DTAG, RELATIVE, RELATIVE_FILTERED, RELATIVE_OBV};
use crate::metrics::KReport;

/// A curve column: header name, source set and the value it reads.
pub struct Measure {
    pub column: &'static str,
    pub label: &'static str,
    pub set: &'static str,
    pub value: fn(&KReport) -> Option<f64>,
}

pub const MEASURES: &[Measure] = &[
    Measure {
        column: "overall_accuracy",
        label: "overall accuracy",
        set: ABSOLUTE,
        value: |r| r.overall_accuracy,
    },
    Measure {
        column: "overall_accuracy_partial",
        label: "overall accuracy (partial)",
        set: ABSOLUTE,
        value: |r| r.overall_accuracy_partial,
    },
    Measure {
        column: "so_accuracy",
        label: "SO accuracy",
        set: ABSOLUTE,
        value: |r| r.so_accuracy,
    },
    Measure {
        column: "absolute_variant_purity",
        label: "absolute",
        set: ABSOLUTE,
        value: |r| Some(r.variant_purity),
    },
    Measure {
        column: "relative_variant_purity",
        label: "relative",
        set: RELATIVE,
        value: |r| Some(r.variant_purity),
    },
    Measure {
        column: "relative_filtered_variant_purity",
        label: "relative, filtered",
        set: RELATIVE_FILTERED,
        value: |r| Some(r.variant_purity),
    },
    Measure {
        column: "absolute_dtag_purity",
        label: "absolute",
        set: ABSOLUTE_DTAG,
        value: |r| Some(r.dtag_purity),
    },
    Measure {
        column: "relative_dtag_purity",
        label: "relative",
        set: RELATIVE_OBV,
        value: |r| Some(r.dtag_purity),
    },
    Measure {
        column: "correct_mean_ld",
        label: "correct pairs",
        set: ABSOLUTE,
        value: |r| r.ld_profile.and_then(|p| p.correct_mean_ld),
    },
    Measure {
        column: "error_mean_ld",
        label: "error pairs",
        set: ABSOLUTE,
        value: |r| r.ld_profile.and_then(|p| p.error_mean_ld),
    },
    Measure {
        column: "absolute_inertia",
        label: "absolute",
        set: ABSOLUTE,
        value: |r| Some(r.inertia),
    },
    Measure {
        column: "relative_inertia",
        label: "relative",
        set: RELATIVE,
        value: |r| Some(r.inertia),
    },
];

fn measure(column: &str) -> &'static Measure {
    MEASURES.iter().find(|m| m.column == column).expect("known measure")
}

fn lookup(run: &ModelRun, m: &Measure, k: usize) -> Option<f64> {
    run.set(m.set)?.per_k.iter().find(|r| r.k == k).and_then(m.value)
}

/// One row per (model run, k).
pub fn write_curves_csv<W: Write>(metrics: &MetricsFile, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["model_id", "k"];
    header.extend(MEASURES.iter().map(|m| m.column));
    w.write_record(&header)?;
    for run in &metrics.runs {
        for k in metrics.k_min..=metrics.k_max {
            let mut row = vec![run.model_id.clone(), k.to_string()];
            row.extend(
                MEASURES
                    .iter()
                    .map(|m| lookup(run, m, k).map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct Plot {
    pub file: &'static str,
    pub title: &'static str,
    pub y_desc: &'static str,
    pub columns: &'static [&'static str],
    pub unit_range: bool,
}

pub const PLOTS: &[Plot] = &[
    Plot {
        file: "accuracy_by_k.svg",
        title: "Co-clustering accuracy by k",
        y_desc: "accuracy",
        columns: &["overall_accuracy", "so_accuracy"],
        unit_range: true,
    },
    Plot {
        file: "variant_purity_by_k.svg",
        title: "Variant-kind purity by k",
        y_desc: "purity",
        columns: &["relative_variant_purity", "relative_filtered_variant_purity"],
        unit_range: true,
    },
    Plot {
        file: "dtag_purity_by_k.svg",
        title: "Dtag purity by k",
        y_desc: "purity",
        columns: &["absolute_dtag_purity", "relative_dtag_purity"],
        unit_range: true,
    },
    Plot {
        file: "ld_by_k.svg",
        title: "Mean std/obv edit distance by grouping outcome",
        y_desc: "mean LD",
        columns: &["correct_mean_ld", "error_mean_ld"],
        unit_range: false,
    },
];

const COLORS: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

type Series = (String, Vec<(f64, f64)>);

fn series_for(metrics: &MetricsFile, plot: &Plot) -> Vec<Series> {
    let mut out = Vec::new();
    for run in &metrics.runs {
        for column in plot.columns {
            let m = measure(column);
            let points: Vec<(f64, f64)> = (metrics.k_min..=metrics.k_max)
                .filter_map(|k| lookup(run, m, k).map(|v| (k as f64, v)))
                .collect();
            if !points.is_empty() {
                out.push((format!("{} {}", run.model_id, m.label), points));
            }
        }
    }
    out
}

/// Draw one plot; one line per model run per measure.
pub fn draw_plot(metrics: &MetricsFile, plot: &Plot, path: &Path) -> Result<(), String> {
    let series = series_for(metrics, plot);
    let (x0, x1) = (metrics.k_min as f64 - 0.5, metrics.k_max as f64 + 0.5);
    let y1 = if plot.unit_range {
        1.0
    } else {
        series
            .iter()
            .flat_map(|(_, p)| p.iter().map(|&(_, y)| y))
            .fold(1.0f64, f64::max)
            * 1.1
    };
    let root = SVGBackend::new(path, (900, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let mut chart = ChartBuilder::on(&root)
        .caption(plot.title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, 0.0..y1)
        .map_err(|e| e.to_string())?;
    chart
        .configure_mesh()
        .x_desc("k")
        .y_desc(plot.y_desc)
        .draw()
        .map_err(|e| e.to_string())?;
    for (i, (label, points)) in series.into_iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        chart
            .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
            .map_err(|e| e.to_string())?
            .label(label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart
            .draw_series(points.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(|e| e.to_string())?;
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(|e| e.to_string())?;
    root.present().map_err(|e| e.to_string())?;
    Ok(())
}
