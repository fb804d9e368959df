//! Output artifacts: CSV tables, a run manifest, and SVG line charts.
//!
//! CSV is UTF-8 with a header row, `,` separators and `.` decimals. Floats are
//! written in their shortest round-trip form, switching to scientific notation
//! when `|x| ≥ 1e6` or `0 < |x| ≤ 1e-4`, so reading a file back reproduces the
//! in-memory values exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::{ExpansionRow, RiskEstimate, TimingReport};

/// Tool version, `<crate version>` plus `git describe` output when available.
pub const VERSION: &str = env!("BAYES_EXT_VERSION");

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
    Int(u64),
    Empty,
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Cell::Num(v) => Some(v),
            Cell::Int(v) => Some(v as f64),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn parse(s: &str) -> Cell {
        if s.is_empty() {
            Cell::Empty
        } else if let Ok(v) = s.parse::<u64>() {
            Cell::Int(v)
        } else if let Ok(v) = s.parse::<f64>() {
            Cell::Num(v)
        } else {
            Cell::Text(s.to_string())
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Shortest round-trip decimal; scientific for `|x| ≥ 1e6` or `0 < |x| ≤ 1e-4`.
///
/// Integral values in fixed notation keep a trailing `.0` so they read back as floats.
pub fn format_float(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "NaN".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let a = v.abs();
    if a >= 1e6 || (a > 0.0 && a <= 1e-4) {
        format!("{v:e}")
    } else {
        let s = format!("{v}");
        if s.contains('.') {
            s
        } else {
            s + ".0"
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_csv_str(s: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(s.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(Cell::parse).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv_str(&fs::read_to_string(path)?)
    }
}

pub const CIRCLE_HEADER: [&str; 6] = [
    "predictive",
    "mean_risk",
    "stderr",
    "paired_diff_vs_mle_plugin",
    "diff_stderr",
    "ratio_to_paper_constant",
];

/// One row per predictive; `constant` maps a predictive to its leading-order
/// risk improvement over the MLE plugin.
pub fn circle_table(est: &RiskEstimate, constant: impl Fn(&str) -> Option<f64>) -> Table {
    let mut t = Table::new(&CIRCLE_HEADER);
    for r in &est.risks {
        let (diff, se) = match est.diff("mle_plugin", &r.predictive) {
            Some(d) => (d.mean, d.stderr),
            None => (0.0, 0.0),
        };
        let ratio = constant(&r.predictive).map(|c| diff / c);
        t.push(vec![
            r.predictive.as_str().into(),
            r.mean.into(),
            r.stderr.into(),
            diff.into(),
            se.into(),
            ratio.into(),
        ]);
    }
    t
}

pub const SPIKED_HEADER: [&str; 8] = [
    "lambda",
    "predictive",
    "mean_risk",
    "stderr",
    "paired_diff_vs_bayes_plugin",
    "diff_vs_bayes_plugin_stderr",
    "paired_diff_vs_mixture",
    "diff_vs_mixture_stderr",
];

fn signed_diff(est: &RiskEstimate, a: &str, b: &str) -> (Option<f64>, Option<f64>) {
    if a == b {
        return (Some(0.0), Some(0.0));
    }
    if let Some(d) = est.diff(a, b) {
        (Some(d.mean), Some(d.stderr))
    } else if let Some(d) = est.diff(b, a) {
        (Some(-d.mean), Some(d.stderr))
    } else {
        (None, None)
    }
}

pub fn spiked_table(results: &[(f64, RiskEstimate)]) -> Table {
    let mut t = Table::new(&SPIKED_HEADER);
    for (lambda, est) in results {
        for r in &est.risks {
            let (dp, sp) = signed_diff(est, &r.predictive, "bayes_plugin");
            let (dm, sm) = signed_diff(est, &r.predictive, "mixture");
            t.push(vec![
                (*lambda).into(),
                r.predictive.as_str().into(),
                r.mean.into(),
                r.stderr.into(),
                dp.into(),
                sp.into(),
                dm.into(),
                sm.into(),
            ]);
        }
    }
    t
}

pub const EXPANSION_HEADER: [&str; 4] = ["n", "exact_norm_gap", "expansion_gap_times_n", "orthogonality_residual"];

pub fn expansion_table(rows: &[ExpansionRow]) -> Table {
    let mut t = Table::new(&EXPANSION_HEADER);
    for r in rows {
        t.push(vec![
            r.n.into(),
            r.exact_norm_gap.into(),
            r.expansion_gap_times_n.into(),
            r.orthogonality_residual.into(),
        ]);
    }
    t
}

pub const TIMING_HEADER: [&str; 3] = ["predictive", "eval_seconds", "bytes"];

pub fn timing_table(rep: &TimingReport) -> Table {
    let mut t = Table::new(&TIMING_HEADER);
    t.push(vec![
        "mixture".into(),
        rep.mixture_seconds.into(),
        rep.mixture_bytes.into(),
    ]);
    t.push(vec![
        "extended_plugin".into(),
        rep.extended_seconds.into(),
        rep.extended_bytes.into(),
    ]);
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_seconds: f64,
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    /// `<stem>.manifest.json` next to the main output.
    pub fn path_for(out: &Path) -> PathBuf {
        let stem = out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        out.with_file_name(format!("{stem}.manifest.json"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#66487a", "#30638e"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// SVG 1.1 line chart with one polyline per series and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 50.0);
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let (ax0, ax1, ay0, ay1) = (px(x0), px(x1), py(y0), py(y1));
    let _ = writeln!(
        s,
        r#"<path d="M{ax0:.1},{ay1:.1} V{ay0:.1} H{ax1:.1}" fill="none" stroke="black"/>"#
    );
    for t in ticks(x0, x1, 5) {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(t),
            ay0 + 16.0,
            format!("{t:.3}").trim_end_matches('0').trim_end_matches('.')
        );
    }
    for t in ticks(y0, y1, 5) {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.3e}</text>"#,
            ax0 - 6.0,
            py(t) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (ax0 + ax1) / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (ay0 + ay1) / 2.0,
        (ay0 + ay1) / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            coords.join(" ")
        );
        let ly = top + 20.0 * i as f64 + 10.0;
        let lx = w - right + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Risk against λ, one series per predictive.
pub fn spiked_chart(results: &[(f64, RiskEstimate)], title: &str) -> String {
    let names: Vec<String> = results
        .first()
        .map(|r| r.1.risks.iter().map(|p| p.predictive.clone()).collect())
        .unwrap_or_default();
    let series: Vec<Series> = names
        .iter()
        .map(|name| Series {
            name: name.clone(),
            points: results
                .iter()
                .filter_map(|(l, est)| est.risk(name).map(|r| (*l, r.mean)))
                .collect(),
        })
        .collect();
    line_chart(title, "λ", "KL risk", &series)
}
