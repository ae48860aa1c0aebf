//! Static SVG line charts from CSV columns.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_Y: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct ChartSpec {
    pub title: String,
    pub x: String,
    /// Columns to draw; empty means every column other than `x`.
    pub series: Vec<String>,
    pub log_x: bool,
    pub log_y: bool,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(csv_bytes: &[u8]) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(csv_bytes);
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Table { header, rows })
}

fn column(table: &Table, name: &str) -> Result<usize> {
    table
        .header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("missing column `{name}` (have {})", table.header.join(","))))
}

fn parse(value: &str, name: &str, row: usize) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::Schema(format!("column `{name}` row {row}: `{value}` is not a number")))
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        Self { lo, hi, log }
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn label(&self, t: f64) -> String {
        let v = self.lo + t * (self.hi - self.lo);
        if self.log {
            format!("1e{v:.1}")
        } else {
            format!("{v:.3e}")
        }
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One polyline per series over a shared x column. Points that are not
/// positive on a log axis are dropped.
pub fn render_svg(csv_bytes: &[u8], spec: &ChartSpec) -> Result<String> {
    let table = read_table(csv_bytes)?;
    let x_col = column(&table, &spec.x)?;
    let names: Vec<String> = if spec.series.is_empty() {
        table.header.iter().filter(|h| **h != spec.x).cloned().collect()
    } else {
        spec.series.clone()
    };
    let cols = names.iter().map(|n| column(&table, n)).collect::<Result<Vec<_>>>()?;

    let keep = |v: f64, log: bool| v.is_finite() && (!log || v > 0.0);
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); cols.len()];
    for (r, row) in table.rows.iter().enumerate() {
        let x = parse(&row[x_col], &spec.x, r)?;
        for (s, &c) in cols.iter().enumerate() {
            let y = parse(&row[c], &names[s], r)?;
            if keep(x, spec.log_x) && keep(y, spec.log_y) {
                series[s].push((x, y));
            }
        }
    }
    let x_axis = Axis::fit(series.iter().flatten().map(|p| p.0), spec.log_x);
    let y_axis = Axis::fit(series.iter().flatten().map(|p| p.1), spec.log_y);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let px = |x: f64| MARGIN_LEFT + x_axis.unit(x) * plot_w;
    let py = |y: f64| HEIGHT - MARGIN_Y - y_axis.unit(y) * plot_h;

    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(w, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#, MARGIN_LEFT + plot_w / 2.0, escape(&spec.title));
    let (x0, y0, x1, y1) = (MARGIN_LEFT, HEIGHT - MARGIN_Y, WIDTH - MARGIN_RIGHT, MARGIN_Y);
    let _ = writeln!(w, r#"<path d="M{x0:.1} {y1:.1} L{x0:.1} {y0:.1} L{x1:.1} {y0:.1}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (tx, ty) = (x0 + t * plot_w, y0 - t * plot_h);
        let _ = writeln!(w, r#"<text x="{tx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y0 + 15.0, x_axis.label(t));
        let _ = writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 5.0, ty + 4.0, y_axis.label(t));
    }
    let _ = writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, x0 + plot_w / 2.0, HEIGHT - 5.0, escape(&spec.x));

    if series.iter().all(Vec::is_empty) {
        let _ = writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="gray">empty</text>"#, x0 + plot_w / 2.0, y0 - plot_h / 2.0);
    }
    for (s, points) in series.iter().enumerate() {
        let colour = PALETTE[s % PALETTE.len()];
        if !points.is_empty() {
            let coords: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(w, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        }
        let ly = y1 + 15.0 * s as f64;
        let _ = writeln!(w, r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/>"#, x1 + 10.0, x1 + 30.0);
        let _ = writeln!(w, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x1 + 35.0, ly + 4.0, escape(&names[s]));
    }
    let _ = writeln!(w, "</svg>");
    Ok(out)
}
