//! Minimal standalone SVG line charts.

use std::fmt::Write as _;

use crate::CliError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;

/// A parsed two-or-more column CSV with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn parse_csv(text: &str) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 {
        return Err(CliError::csv(
            "CSV needs a header with at least two columns",
        ));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::csv(e.to_string()))?;
        let row = record
            .iter()
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::csv(format!("row {}: {e}", i + 2)))?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(CliError::csv(format!(
                "row {} holds a non-finite value",
                i + 2
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::csv("CSV has no data rows"));
    }
    Ok(Table { header, rows })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// One polyline per `series` column index, all against column `x`.
pub fn render_svg(
    table: &Table,
    x: usize,
    series: &[usize],
    title: &str,
) -> Result<String, CliError> {
    let cols = table.header.len();
    if x >= cols || series.is_empty() || series.iter().any(|&c| c >= cols) {
        return Err(CliError::csv("requested column is missing"));
    }
    let (x0, x1) = span(table.rows.iter().map(|r| r[x]));
    let (y0, y1) = span(
        series
            .iter()
            .flat_map(|&c| table.rows.iter().map(move |r| r[c])),
    );
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let px = |v: f64| MARGIN + (v - x0) / (x1 - x0) * plot_w;
    let py = |v: f64| HEIGHT - MARGIN - (v - y0) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        MARGIN / 2.0,
        escape(title)
    );
    // Axes.
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {top} L{m} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        top = MARGIN,
        bottom = HEIGHT - MARGIN,
        right = WIDTH - MARGIN
    );
    for (v, anchor_x, anchor_y, align) in [
        (x0, px(x0), HEIGHT - MARGIN + 18.0, "middle"),
        (x1, px(x1), HEIGHT - MARGIN + 18.0, "middle"),
        (y0, MARGIN - 6.0, py(y0) + 4.0, "end"),
        (y1, MARGIN - 6.0, py(y1) + 4.0, "end"),
    ] {
        let _ = writeln!(
            svg,
            r#"<text x="{anchor_x:.2}" y="{anchor_y:.2}" text-anchor="{align}" font-family="sans-serif" font-size="11">{}</text>"#,
            format_tick(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0,
        escape(&table.header[x])
    );
    let ylabel = series
        .iter()
        .map(|&c| table.header[c].as_str())
        .collect::<Vec<_>>()
        .join(", ");
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{y}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 15 {y})">{}</text>"#,
        escape(&ylabel),
        y = HEIGHT / 2.0
    );

    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    for (i, &c) in series.iter().enumerate() {
        let points = table
            .rows
            .iter()
            .map(|r| format!("{:.3},{:.3}", px(r[x]), py(r[c])))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            svg,
            r#"<polyline points="{points}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            COLORS[i % COLORS.len()]
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.3e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}
