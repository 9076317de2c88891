use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryKind {
    Alpha,
    Thickness,
    BgsLoss,
}

impl SummaryKind {
    pub fn column(self) -> &'static str {
        match self {
            SummaryKind::Alpha => "alpha",
            SummaryKind::Thickness => "thickness",
            SummaryKind::BgsLoss => "bgs_loss",
        }
    }

    fn from_column(name: &str) -> Option<Self> {
        [SummaryKind::Alpha, SummaryKind::Thickness, SummaryKind::BgsLoss].into_iter().find(|k| k.column() == name)
    }

    fn title(self) -> &'static str {
        match self {
            SummaryKind::Alpha => "mAP vs fusion alpha",
            SummaryKind::Thickness => "mAP vs boundary thickness",
            SummaryKind::BgsLoss => "mAP by boundary loss",
        }
    }
}

/// A sweep summary: one `(setting, mAP)` row per sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub kind: SummaryKind,
    pub rows: Vec<(String, Option<f64>)>,
}

fn plot_error(path: &Path, message: impl std::fmt::Display) -> CliError {
    CliError::Plot(format!("{}: {message}", path.display()))
}

/// Reads a summary CSV. The first column names the swept setting; `mAP` must be present.
pub fn read_summary(path: &Path) -> Result<Summary, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| plot_error(path, e))?;
    let headers = reader.headers().map_err(|e| plot_error(path, e))?.clone();
    let kind = headers
        .get(0)
        .and_then(SummaryKind::from_column)
        .ok_or_else(|| plot_error(path, "first column must be alpha, thickness or bgs_loss"))?;
    let map_col = headers.iter().position(|h| h == "mAP").ok_or_else(|| plot_error(path, "no mAP column"))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| plot_error(path, e))?;
        let x = record.get(0).unwrap_or_default().to_string();
        let y = match record.get(map_col).unwrap_or_default() {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|e| plot_error(path, format!("mAP `{v}`: {e}")))?),
        };
        if kind != SummaryKind::BgsLoss && x.parse::<f64>().is_err() {
            return Err(plot_error(path, format!("{} `{x}` is not a number", kind.column())));
        }
        rows.push((x, y));
    }
    if rows.is_empty() {
        return Err(plot_error(path, "summary has no rows"));
    }
    Ok(Summary { kind, rows })
}

/// The plotted values as CSV, exactly as drawn.
pub fn plot_data(summary: &Summary) -> String {
    let mut out = format!("{},mAP\n", summary.kind.column());
    for (x, y) in &summary.rows {
        let _ = writeln!(out, "{x},{}", y.map(|v| format!("{v:.6}")).unwrap_or_default());
    }
    out
}

fn y_top(summary: &Summary) -> f64 {
    let max = summary.rows.iter().filter_map(|r| r.1).fold(0.0, f64::max);
    ((max * 10.0).ceil() / 10.0).clamp(0.1, 1.0)
}

fn header(svg: &mut String, title: &str, x_label: &str, top: f64) {
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">
<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{title}</text>
"#,
        WIDTH / 2.0
    );
    let (x0, y0, x1, y1) = (LEFT, HEIGHT - BOTTOM, WIDTH - RIGHT, TOP);
    let _ = writeln!(svg, r#"<path d="M{x0:.1},{y1:.1} V{y0:.1} H{x1:.1}" stroke="black" fill="none"/>"#);
    for i in 0..=5 {
        let v = top * i as f64 / 5.0;
        let y = y0 - (y0 - y1) * i as f64 / 5.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{x1:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            x0,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text><text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">mAP</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
}

fn y_pos(v: f64, top: f64) -> f64 {
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    y0 - (y0 - y1) * (v / top).min(1.0)
}

fn line_plot(summary: &Summary) -> String {
    let top = y_top(summary);
    let mut svg = String::new();
    header(&mut svg, summary.kind.title(), summary.kind.column(), top);
    let xs: Vec<f64> = summary.rows.iter().map(|r| r.0.parse().expect("validated on read")).collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
    let pad = 16.0;
    let x_pos = |x: f64| LEFT + pad + (WIDTH - RIGHT - LEFT - 2.0 * pad) * (x - lo) / (hi - lo);
    for (x, (label, _)) in xs.iter().zip(&summary.rows) {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
            x_pos(*x),
            HEIGHT - BOTTOM + 16.0
        );
    }
    let points: Vec<(f64, f64)> =
        xs.iter().zip(&summary.rows).filter_map(|(x, r)| r.1.map(|y| (x_pos(*x), y_pos(y, top)))).collect();
    if points.len() > 1 {
        let coords: Vec<String> = points.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        let _ = writeln!(
            svg,
            r##"<polyline class="curve" points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
            coords.join(" ")
        );
    }
    for (x, y) in points {
        let _ = writeln!(svg, r##"<circle class="marker" cx="{x:.1}" cy="{y:.1}" r="4" fill="#1f77b4"/>"##);
    }
    svg.push_str("</svg>\n");
    svg
}

fn bar_plot(summary: &Summary) -> String {
    let top = y_top(summary);
    let mut svg = String::new();
    header(&mut svg, summary.kind.title(), summary.kind.column(), top);
    let slot = (WIDTH - RIGHT - LEFT) / summary.rows.len() as f64;
    for (i, (label, y)) in summary.rows.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
            HEIGHT - BOTTOM + 16.0
        );
        if let Some(y) = y {
            let (bar_top, w) = (y_pos(*y, top), slot * 0.6);
            let _ = writeln!(
                svg,
                r##"<rect class="bar" x="{:.1}" y="{bar_top:.1}" width="{w:.1}" height="{:.1}" fill="#ff7f0e"/>"##,
                cx - w / 2.0,
                HEIGHT - BOTTOM - bar_top
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders a summary: a line with one marker per point for numeric settings, bars otherwise.
pub fn render_svg(summary: &Summary) -> String {
    match summary.kind {
        SummaryKind::Alpha | SummaryKind::Thickness => line_plot(summary),
        SummaryKind::BgsLoss => bar_plot(summary),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(kind: SummaryKind, rows: &[(&str, Option<f64>)]) -> Summary {
        Summary { kind, rows: rows.iter().map(|(x, y)| (x.to_string(), *y)).collect() }
    }

    #[test]
    fn bars_skip_missing_values() {
        let s = summary(SummaryKind::BgsLoss, &[("focal", Some(0.4)), ("bce", None), ("dice", Some(0.2))]);
        let svg = render_svg(&s);
        assert_eq!(svg.matches("class=\"bar\"").count(), 2);
        assert!(svg.contains(">bce<"));
        assert_eq!(plot_data(&s), "bgs_loss,mAP\nfocal,0.400000\nbce,\ndice,0.200000\n");
    }

    #[test]
    fn y_axis_rounds_up_to_a_tenth() {
        assert_eq!(y_top(&summary(SummaryKind::Alpha, &[("0", Some(0.34))])), 0.4);
        assert_eq!(y_top(&summary(SummaryKind::Alpha, &[("0", None)])), 0.1);
        assert_eq!(y_top(&summary(SummaryKind::Alpha, &[("0", Some(1.0))])), 1.0);
    }
}
