//! Deterministic SVG renderers for probe outputs.
//!
//! Heatmaps use a diverging scale — negative values cold (blue), positive
//! warm (red) — scatter plots color correct inputs blue and incorrect
//! orange with skill-id labels, and curve plots draw one polyline per
//! series. Rendering is a pure function of the input data: identical input
//! produces identical bytes.

use super::tsne::Embedding2D;

const CELL: f64 = 12.0;
const MARGIN: f64 = 40.0;
const PLOT: f64 = 500.0;

/// Blue for correct inputs, orange for incorrect (scatter convention).
const BLUE: &str = "#1f77b4";
const ORANGE: &str = "#ff7f0e";
const CURVE_PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
         width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n\
         <rect x=\"0\" y=\"0\" width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>\n"
    )
}

/// Diverging color: zero maps to white, positive to warm, negative to cold.
fn diverging_color(value: f64, max_abs: f64) -> String {
    if max_abs <= 0.0 || value == 0.0 {
        return "rgb(255,255,255)".to_string();
    }
    let ratio = (value.abs() / max_abs).min(1.0);
    let k = (ratio * 200.0).round() as u8;
    if value > 0.0 {
        format!("rgb(255,{},{})", 255 - k, 255 - k)
    } else {
        format!("rgb({},{},255)", 255 - k, 255 - k)
    }
}

/// Render a matrix of signed values as a diverging heatmap. `row_labels`
/// may be empty; otherwise one label per row.
pub fn heatmap_svg(rows: &[Vec<f64>], row_labels: &[String]) -> String {
    assert!(row_labels.is_empty() || row_labels.len() == rows.len());
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(0, Vec::len);
    let gutter = if row_labels.is_empty() { 4.0 } else { 80.0 };
    let width = gutter + n_cols as f64 * CELL + 4.0;
    let height = n_rows as f64 * CELL + 8.0;
    let max_abs = rows
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut out = svg_open(width, height);
    for (r, row) in rows.iter().enumerate() {
        let y = 4.0 + r as f64 * CELL;
        if let Some(label) = row_labels.get(r) {
            out.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"9\" text-anchor=\"end\" \
                 font-family=\"monospace\">{}</text>\n",
                gutter - 4.0,
                y + CELL - 3.0,
                label
            ));
        }
        for (c, &v) in row.iter().enumerate() {
            out.push_str(&format!(
                "<rect class=\"cell\" x=\"{:.1}\" y=\"{y:.1}\" width=\"{CELL:.1}\" \
                 height=\"{CELL:.1}\" fill=\"{}\"/>\n",
                gutter + c as f64 * CELL,
                diverging_color(v, max_abs)
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Render a labeled 2-D embedding: blue = correct, orange = incorrect,
/// each point annotated with its skill id.
pub fn scatter_svg(embedding: &Embedding2D) -> String {
    let side = PLOT + 2.0 * MARGIN;
    let mut out = svg_open(side, side);
    if embedding.points.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let xs: Vec<f64> = embedding.points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = embedding.points.iter().map(|p| p.y).collect();
    let (min_x, max_x) = bounds(&xs);
    let (min_y, max_y) = bounds(&ys);
    let span_x = (max_x - min_x).max(1e-12);
    let span_y = (max_y - min_y).max(1e-12);
    for p in &embedding.points {
        let cx = MARGIN + (p.x - min_x) / span_x * PLOT;
        // SVG y grows downward; flip so larger y plots higher.
        let cy = MARGIN + (max_y - p.y) / span_y * PLOT;
        let fill = if p.correct == 1 { BLUE } else { ORANGE };
        out.push_str(&format!(
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"{fill}\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"7\" font-family=\"monospace\">{}</text>\n",
            cx + 5.0,
            cy + 3.0,
            p.skill
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Render one polyline per (label, values) series on shared axes.
pub fn curves_svg(series: &[(String, Vec<f64>)]) -> String {
    let side = PLOT + 2.0 * MARGIN;
    let mut out = svg_open(side, side);
    let all: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    if all.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let (min_v, max_v) = bounds(&all);
    let span = (max_v - min_v).max(1e-12);
    let max_len = series.iter().map(|(_, v)| v.len()).max().unwrap();
    out.push_str(&format!(
        "<rect x=\"{MARGIN:.0}\" y=\"{MARGIN:.0}\" width=\"{PLOT:.0}\" height=\"{PLOT:.0}\" \
         fill=\"none\" stroke=\"black\"/>\n"
    ));
    for (idx, (label, values)) in series.iter().enumerate() {
        if values.is_empty() {
            continue;
        }
        let color = CURVE_PALETTE[idx % CURVE_PALETTE.len()];
        let step = if max_len > 1 {
            PLOT / (max_len - 1) as f64
        } else {
            0.0
        };
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                format!(
                    "{:.2},{:.2}",
                    MARGIN + i as f64 * step,
                    MARGIN + (max_v - v) / span * PLOT
                )
            })
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" fill=\"{color}\" \
             font-family=\"monospace\">{label}</text>\n",
            points.join(" "),
            MARGIN + 6.0,
            MARGIN + 14.0 + 12.0 * idx as f64,
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

// ---------------------------------------------------------------------------
