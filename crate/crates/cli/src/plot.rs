//! SVG rendering of correlation runs: per tracked class, the gap series and
//! the sensitivity-norm series overlaid against checkpoint index.
//!
//! Stored norm values are raw; scaling happens only here, at display time.
//! The divisor is the power of ten closest to the ratio of the series
//! maxima, so both curves land on comparable scales, and it is printed in
//! the legend.

use tsens_core::error::{Error, Result};

const PANEL_W: f64 = 860.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 40.0;
const MARGIN_V: f64 = 30.0;

/// Exponent `k` such that dividing the norm series by `10^k` aligns its
/// maximum with the gap maximum's order of magnitude. Zero when either
/// series is degenerate.
pub fn scale_divisor_exponent(norm_max: f64, gap_max: f64) -> i32 {
    if norm_max <= 0.0 || gap_max <= 0.0 {
        return 0;
    }
    (norm_max / gap_max).log10().round() as i32
}

fn divisor_label(exp: i32) -> String {
    if exp == 0 {
        "1".to_string()
    } else {
        format!("1e{exp}")
    }
}

struct Series {
    class: String,
    gaps: Vec<f64>,
    norms: Vec<f64>,
}

fn parse_correlation_csv(text: &str) -> Result<Vec<Series>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))?
        .split(',')
        .collect();
    let mut class_cols: Vec<(String, usize, usize)> = Vec::new();
    for (i, h) in header.iter().enumerate() {
        if let Some(c) = h.strip_prefix("gap_c") {
            let norm_col = header
                .iter()
                .position(|&x| x == format!("avg_ts_norm_c{c}"))
                .ok_or_else(|| Error::Format(format!("missing avg_ts_norm_c{c} column")))?;
            class_cols.push((c.to_string(), i, norm_col));
        }
    }
    if class_cols.is_empty() {
        return Err(Error::Format("no gap_c* columns in CSV".into()));
    }
    let mut series: Vec<Series> = class_cols
        .iter()
        .map(|(c, _, _)| Series {
            class: c.clone(),
            gaps: Vec::new(),
            norms: Vec::new(),
        })
        .collect();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::Format(format!(
                "row has {} fields, header has {}",
                fields.len(),
                header.len()
            )));
        }
        for (s, (_, gap_col, norm_col)) in series.iter_mut().zip(class_cols.iter()) {
            let gap = fields[*gap_col]
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("bad gap value: {e}")))?;
            let norm = fields[*norm_col]
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("bad norm value: {e}")))?;
            s.gaps.push(gap);
            s.norms.push(norm);
        }
    }
    if series[0].gaps.is_empty() {
        return Err(Error::Format("CSV has no data rows".into()));
    }
    Ok(series)
}

fn polyline(points: &[(f64, f64)], style: &str) -> String {
    let pts = points
        .iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect::<Vec<_>>()
        .join(" ");
    format!("  <polyline fill=\"none\" {style} points=\"{pts}\"/>\n")
}

/// Renders the correlation CSV into a standalone SVG document.
pub fn emit_plot_svg(csv_text: &str) -> Result<String> {
    let series = parse_correlation_csv(csv_text)?;
    let total_h = series.len() as f64 * (PANEL_H + MARGIN_V) + MARGIN_V;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PANEL_W}\" height=\"{total_h}\" \
         viewBox=\"0 0 {PANEL_W} {total_h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (panel, s) in series.iter().enumerate() {
        let top = MARGIN_V + panel as f64 * (PANEL_H + MARGIN_V);
        let gap_max = s.gaps.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let norm_max = s.norms.iter().fold(0.0f64, |a, &b| a.max(b));
        let exp = scale_divisor_exponent(norm_max, gap_max);
        let divisor = 10f64.powi(exp);
        let scaled: Vec<f64> = s.norms.iter().map(|v| v / divisor).collect();

        let lo = s
            .gaps
            .iter()
            .chain(scaled.iter())
            .fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = s
            .gaps
            .iter()
            .chain(scaled.iter())
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let span = (hi - lo).max(1e-300);
        let n = s.gaps.len();
        let x_of = |i: usize| {
            if n <= 1 {
                MARGIN_L
            } else {
                MARGIN_L + (PANEL_W - MARGIN_L - MARGIN_R) * i as f64 / (n - 1) as f64
            }
        };
        let y_of = |v: f64| top + 20.0 + (PANEL_H - 60.0) * (1.0 - (v - lo) / span);

        svg.push_str(&format!(
            "<g>\n  <rect x=\"{MARGIN_L}\" y=\"{}\" width=\"{}\" height=\"{}\" \
             fill=\"none\" stroke=\"#999\"/>\n",
            top + 20.0,
            PANEL_W - MARGIN_L - MARGIN_R,
            PANEL_H - 60.0
        ));
        let gap_pts: Vec<(f64, f64)> = s
            .gaps
            .iter()
            .enumerate()
            .map(|(i, &v)| (x_of(i), y_of(v)))
            .collect();
        svg.push_str(&polyline(&gap_pts, "stroke=\"#1f77b4\" stroke-width=\"1.5\""));
        let norm_pts: Vec<(f64, f64)> = scaled
            .iter()
            .enumerate()
            .map(|(i, &v)| (x_of(i), y_of(v)))
            .collect();
        svg.push_str(&polyline(
            &norm_pts,
            "stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"5,3\"",
        ));
        svg.push_str(&format!(
            "  <text x=\"{MARGIN_L}\" y=\"{}\" font-size=\"13\" fill=\"#333\">\
             class {}: gap (solid), sensitivity norm / {} (dashed)</text>\n</g>\n",
            top + 12.0,
            s.class,
            divisor_label(exp)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
