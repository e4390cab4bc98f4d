//! Learning-curve SVGs from a metrics CSV. Output bytes depend only on the
//! input: coordinates are printed with six significant digits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;
/// Rows in the trailing rolling-mean window.
pub const ROLLING_WINDOW: usize = 5;

/// Parsed metrics table: the first column is the x axis.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::MalformedCsv {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads a header line and numeric rows. `NaN` cells are allowed and are
/// left out of the plots.
pub fn read_table(path: &Path) -> Result<MetricsTable> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let columns: Vec<String> = match lines.next() {
        Some((_, header)) if !header.trim().is_empty() => {
            header.split(',').map(|c| c.trim().to_string()).collect()
        }
        _ => return Err(malformed(path, 1, "missing header")),
    };
    if columns.len() < 2 {
        return Err(malformed(
            path,
            1,
            "need a step column and at least one metric",
        ));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() {
            return Err(malformed(
                path,
                i + 1,
                format!("expected {} fields, found {}", columns.len(), cells.len()),
            ));
        }
        let row = cells
            .iter()
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| malformed(path, i + 1, format!("not a number: {c:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(MetricsTable { columns, rows })
}

/// `x` with six significant digits and no trailing zeros.
fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return "0".into();
    }
    let decimals = (5 - x.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{x:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

/// Trailing mean over up to `window` finite values ending at each point.
pub fn rolling_mean(points: &[(f64, f64)], window: usize) -> Vec<(f64, f64)> {
    (0..points.len())
        .map(|i| {
            let from = (i + 1).saturating_sub(window);
            let slice = &points[from..=i];
            (
                points[i].0,
                slice.iter().map(|p| p.1).sum::<f64>() / slice.len() as f64,
            )
        })
        .collect()
}

/// One SVG: axes with min/max labels, the series, and its rolling mean.
pub fn render_svg(x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let (x0, x1) = range(points.iter().map(|p| p.0));
    let (y0, y1) = range(points.iter().map(|p| p.1));
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;
    let (left, right, top, bottom) = (MARGIN_L, WIDTH - MARGIN_R, MARGIN_T, HEIGHT - MARGIN_B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {} {}" width="{}" height="{}">"#,
        WIDTH, HEIGHT, WIDTH, HEIGHT
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black" stroke-width="1"/>"#,
        l = sig6(left),
        t = sig6(top),
        b = sig6(bottom),
        r = sig6(right)
    );
    let label = |s: &mut String, x: f64, y: f64, anchor: &str, text: &str| {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="11" text-anchor="{anchor}">{text}</text>"#,
            sig6(x),
            sig6(y)
        );
    };
    label(&mut s, left, bottom + 16.0, "middle", &sig6(x0));
    label(&mut s, right, bottom + 16.0, "middle", &sig6(x1));
    label(&mut s, left - 6.0, bottom, "end", &sig6(y0));
    label(&mut s, left - 6.0, top + 4.0, "end", &sig6(y1));
    label(
        &mut s,
        (left + right) / 2.0,
        HEIGHT - 12.0,
        "middle",
        &escape(x_label),
    );
    label(
        &mut s,
        (left + right) / 2.0,
        18.0,
        "middle",
        &escape(y_label),
    );

    let polyline = |s: &mut String, pts: &[(f64, f64)], color: &str, width: &str| {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{},{}", sig6(px(x)), sig6(py(y))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
            coords.join(" ")
        );
    };
    match points.len() {
        0 => {}
        1 => {
            let _ = writeln!(
                s,
                r##"<circle cx="{}" cy="{}" r="3" fill="#1f77b4"/>"##,
                sig6(px(points[0].0)),
                sig6(py(points[0].1))
            );
        }
        _ => {
            polyline(&mut s, points, "#1f77b4", "1");
            polyline(
                &mut s,
                &rolling_mean(points, ROLLING_WINDOW),
                "#d62728",
                "2",
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Writes `<metric>.svg` into `out_dir` for every metric column of the CSV
/// and returns the paths in column order.
pub fn emit_plots(metrics_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let table = read_table(metrics_csv)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (j, name) in table.columns.iter().enumerate().skip(1) {
        let points: Vec<(f64, f64)> = table
            .rows
            .iter()
            .map(|r| (r[0], r[j]))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        let file_stem: String = name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let path = out_dir.join(format!("{file_stem}.svg"));
        std::fs::write(&path, render_svg(&table.columns[0], name, &points))?;
        written.push(path);
    }
    Ok(written)
}
