//! SVG rendering of predicted-vs-actual RUL curves.

use std::fmt::Write as _;
use std::path::Path;

use rulforge::evaluate::CurveRecord;
use rulforge::{Error, Result};

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 52.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 40.0;
const COLUMNS: usize = 2;
const PREDICTED_COLOR: &str = "#d62728";
const ACTUAL_COLOR: &str = "#1f4fbf";

/// Reads a `cycle,predicted,actual` export back into a curve.
pub fn read_curve_csv(path: &Path, unit_id: u32) -> Result<CurveRecord> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["cycle", "predicted", "actual"] {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!("{}: expected header cycle,predicted,actual", path.display()),
        });
    }
    let mut curve = CurveRecord {
        unit_id,
        cycles: Vec::new(),
        predicted: Vec::new(),
        actual: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(Error::MalformedRow {
                line,
                expected: 3,
                found: record.len(),
            });
        }
        let field = |i: usize| -> Result<f64> {
            let v: f64 = record[i].parse().map_err(|_| Error::Parse {
                line,
                column: i + 1,
                message: format!("{}: invalid number {:?}", path.display(), &record[i]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: i + 1,
                    message: format!("{}: non-finite value", path.display()),
                });
            }
            Ok(v)
        };
        let cycle = field(0)?;
        if cycle < 0.0 || cycle.fract() != 0.0 {
            return Err(Error::Parse {
                line,
                column: 1,
                message: format!("{}: cycle must be a non-negative integer", path.display()),
            });
        }
        curve.cycles.push(cycle as u32);
        curve.predicted.push(field(1)?);
        curve.actual.push(field(2)?);
    }
    if curve.cycles.is_empty() {
        return Err(Error::Validation(format!("{} holds no curve rows", path.display())));
    }
    Ok(curve)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::MalformedRow {
            line,
            expected: expected_len as usize,
            found: len as usize,
        },
        other => Error::Parse {
            line,
            column: 0,
            message: format!("{}: {other:?}", path.display()),
        },
    }
}

fn path_data(xs: &[f64], ys: &[f64], sx: impl Fn(f64) -> f64, sy: impl Fn(f64) -> f64) -> String {
    let mut d = String::new();
    for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
        let cmd = if i == 0 { 'M' } else { 'L' };
        let _ = write!(d, "{cmd}{:.2},{:.2} ", sx(*x), sy(*y));
    }
    d.trim_end().to_string()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One panel per curve, laid out two per row. Output depends only on the input.
pub fn render_svg(panels: &[(String, CurveRecord)]) -> Result<String> {
    if panels.is_empty() {
        return Err(Error::Validation("nothing to plot".into()));
    }
    let rows = panels.len().div_ceil(COLUMNS);
    let cols = panels.len().min(COLUMNS);
    let (w, h) = (PANEL_W * cols as f64, PANEL_H * rows as f64);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (i, (title, curve)) in panels.iter().enumerate() {
        let ox = PANEL_W * (i % COLUMNS) as f64;
        let oy = PANEL_H * (i / COLUMNS) as f64;
        let xs: Vec<f64> = curve.cycles.iter().map(|&c| c as f64).collect();
        let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let mut x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if x_max <= x_min {
            x_max = x_min + 1.0;
        }
        let y_max = curve
            .predicted
            .iter()
            .chain(&curve.actual)
            .copied()
            .fold(1.0, f64::max);
        let (left, right) = (ox + MARGIN_L, ox + PANEL_W - MARGIN_R);
        let (top, bottom) = (oy + MARGIN_T, oy + PANEL_H - MARGIN_B);
        let sx = |x: f64| left + (x - x_min) / (x_max - x_min) * (right - left);
        let sy = |y: f64| bottom - y.max(0.0) / y_max * (bottom - top);

        let _ = writeln!(svg, "<g>");
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
            (left + right) / 2.0,
            oy + 18.0,
            escape(title)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{left:.2}" y1="{bottom:.2}" x2="{right:.2}" y2="{bottom:.2}" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{left:.2}" y1="{top:.2}" x2="{left:.2}" y2="{bottom:.2}" stroke="black"/>"#
        );
        for (x, anchor, label) in [(left, "start", x_min), (right, "end", x_max)] {
            let _ = writeln!(
                svg,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="{anchor}">{label}</text>"#,
                bottom + 14.0
            );
        }
        for (y, label) in [(bottom, 0.0), (top, y_max)] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label:.0}</text>"#,
                left - 4.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">cycles</text>"#,
            (left + right) / 2.0,
            bottom + 30.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">RUL</text>"#,
            ox + 14.0,
            (top + bottom) / 2.0,
            ox + 14.0,
            (top + bottom) / 2.0
        );
        let _ = writeln!(
            svg,
            r#"<path class="actual" d="{}" fill="none" stroke="{ACTUAL_COLOR}" stroke-width="1.5"/>"#,
            path_data(&xs, &curve.actual, sx, sy)
        );
        let _ = writeln!(
            svg,
            r#"<path class="predicted" d="{}" fill="none" stroke="{PREDICTED_COLOR}" stroke-width="1.5" stroke-dasharray="4 2"/>"#,
            path_data(&xs, &curve.predicted, sx, sy)
        );
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
