//! CSV and SVG emission for round logs and projections.
//!
//! Files written into the output directory: `accuracy.csv`
//! (round,model,class,accuracy,overall), `forgetting.csv`
//! (model,class,forgetting), one `accuracy_<model>.svg` grouped-bar chart per
//! evaluated model, and per projection a `projection_<method>.csv`
//! (x,y[,z],class) plus a `projection_<method>.svg` scatter.

use std::fs;
use std::path::{Path, PathBuf};

use super::{forgetting, AccuracyMatrix, AnalysisError, Projection};
use crate::dataset::NUM_CLASSES;
use crate::fedsim::RoundLog;
use crate::fmt::sig9;

/// One fill color per class, fixed so charts are comparable across runs.
const CLASS_COLORS: [&str; NUM_CLASSES] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860",
];

const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "Walking",
    "WalkingUpstairs",
    "WalkingDownstairs",
    "Sitting",
    "Standing",
    "Lying",
];

/// Write every report for a finished run. Returns the written paths.
pub fn emit_reports(
    log: &RoundLog,
    projections: &[Projection],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, AnalysisError> {
    assert!(!log.records.is_empty(), "cannot report an empty round log");
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let accuracy = out_dir.join("accuracy.csv");
    fs::write(&accuracy, log.accuracy_csv())?;
    written.push(accuracy);

    // Forgetting per model; models with fewer than two logged rounds have
    // nothing to measure and contribute no rows.
    let mut forgetting_csv = String::from("model,class,forgetting\n");
    for model in log.models() {
        let rows = log.per_class_rows(model);
        if rows.len() < 2 {
            continue;
        }
        let matrix = AccuracyMatrix { model, rows };
        let f = forgetting(&matrix).expect("two or more rounds");
        for (c, v) in f.iter().enumerate() {
            forgetting_csv.push_str(&format!("{model},{c},{}\n", sig9(*v)));
        }
    }
    let forgetting_path = out_dir.join("forgetting.csv");
    fs::write(&forgetting_path, forgetting_csv)?;
    written.push(forgetting_path);

    for model in log.models() {
        let rounds: Vec<u32> = log
            .records
            .iter()
            .filter(|r| r.round >= 1 && r.evals.iter().any(|e| e.model == model))
            .map(|r| r.round)
            .collect();
        let rows = log.per_class_rows(model);
        if rows.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("accuracy_{model}.svg"));
        fs::write(&path, bar_chart_svg(&format!("{model}"), &rounds, &rows))?;
        written.push(path);
    }

    for proj in projections {
        let base = format!("projection_{}", proj.method_name());
        let csv_path = out_dir.join(format!("{base}.csv"));
        fs::write(&csv_path, projection_csv(proj))?;
        written.push(csv_path);
        let svg_path = out_dir.join(format!("{base}.svg"));
        fs::write(&svg_path, scatter_svg(proj))?;
        written.push(svg_path);
    }

    Ok(written)
}

/// `x,y[,z],class` rows for a projection.
pub fn projection_csv(proj: &Projection) -> String {
    let dims = proj.coords.shape()[1];
    let mut out = String::from(match dims {
        2 => "x,y,class\n",
        3 => "x,y,z,class\n",
        _ => panic!("projection must be 2-D or 3-D"),
    });
    for (i, row) in proj.coords.values().chunks_exact(dims).enumerate() {
        for v in row {
            out.push_str(&sig9(*v));
            out.push(',');
        }
        let class = proj
            .labels
            .get(i)
            .map(|a| a.id().to_string())
            .unwrap_or_default();
        out.push_str(&class);
        out.push('\n');
    }
    out
}

/// Grouped bar chart: one group per round, one bar per class, y in [0, 1].
/// Data bars carry `class="bar"`, legend swatches `class="legend"`.
pub fn bar_chart_svg(model: &str, rounds: &[u32], rows: &[[f64; NUM_CLASSES]]) -> String {
    assert_eq!(rounds.len(), rows.len());
    let (width, height) = (900.0, 420.0);
    let (left, right, top, bottom) = (60.0, 180.0, 40.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">per-class accuracy after each round ({model})</text>\n",
        left
    ));

    // Gridlines and y labels every 0.2.
    for tick in 0..=5 {
        let frac = tick as f64 / 5.0;
        let y = top + plot_h * (1.0 - frac);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            sig9(left),
            sig9(y),
            sig9(left + plot_w),
            sig9(y)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.1}</text>\n",
            sig9(left - 8.0),
            sig9(y + 4.0),
            frac
        ));
    }

    let groups = rounds.len().max(1) as f64;
    let group_w = plot_w / groups;
    let bar_w = group_w * 0.8 / NUM_CLASSES as f64;
    for (gi, (&round, row)) in rounds.iter().zip(rows).enumerate() {
        let group_x = left + gi as f64 * group_w;
        for (c, &acc) in row.iter().enumerate() {
            let v = if acc.is_nan() { 0.0 } else { acc.clamp(0.0, 1.0) };
            let h = plot_h * v;
            let x = group_x + group_w * 0.1 + c as f64 * bar_w;
            svg.push_str(&format!(
                "<rect class=\"bar\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                sig9(x),
                sig9(top + plot_h - h),
                sig9(bar_w),
                sig9(h),
                CLASS_COLORS[c]
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{round}</text>\n",
            sig9(group_x + group_w / 2.0),
            sig9(top + plot_h + 18.0)
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\"/>\n",
        sig9(left),
        sig9(top + plot_h),
        sig9(left + plot_w),
        sig9(top + plot_h)
    ));

    for (c, name) in CLASS_NAMES.iter().enumerate() {
        let y = top + 16.0 * c as f64;
        svg.push_str(&format!(
            "<rect class=\"legend\" x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n",
            sig9(width - right + 12.0),
            sig9(y),
            CLASS_COLORS[c]
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{c} {name}</text>\n",
            sig9(width - right + 30.0),
            sig9(y + 10.0)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Scatter plot of a 2-D or 3-D projection (first two axes), colored by class.
pub fn scatter_svg(proj: &Projection) -> String {
    let dims = proj.coords.shape()[1];
    let n = proj.coords.shape()[0];
    let values = proj.coords.values();
    let (width, height) = (640.0, 640.0);
    let (margin, legend) = (50.0, 160.0);
    let plot_w = width - 2.0 * margin - legend;
    let plot_h = height - 2.0 * margin;

    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for row in values.chunks_exact(dims) {
        min_x = min_x.min(row[0]);
        max_x = max_x.max(row[0]);
        min_y = min_y.min(row[1]);
        max_y = max_y.max(row[1]);
    }
    let span_x = (max_x - min_x).max(1e-12);
    let span_y = (max_y - min_y).max(1e-12);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{margin}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">{} projection of {n} feature rows</text>\n",
        proj.method_name()
    ));
    svg.push_str(&format!(
        "<rect x=\"{margin}\" y=\"{margin}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999999\"/>\n",
        sig9(plot_w),
        sig9(plot_h)
    ));

    for (i, row) in values.chunks_exact(dims).enumerate() {
        let cx = margin + (row[0] - min_x) / span_x * plot_w;
        let cy = margin + (1.0 - (row[1] - min_y) / span_y) * plot_h;
        let color = proj
            .labels
            .get(i)
            .map(|a| CLASS_COLORS[a.id()])
            .unwrap_or("#555555");
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.7\"/>\n",
            sig9(cx),
            sig9(cy),
            color
        ));
    }

    for (c, name) in CLASS_NAMES.iter().enumerate() {
        let y = margin + 16.0 * c as f64;
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"{}\"/>\n",
            sig9(width - legend + 10.0),
            sig9(y),
            CLASS_COLORS[c]
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{c} {name}</text>\n",
            sig9(width - legend + 22.0),
            sig9(y + 4.0)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
