//! Labelled layer-grid matrices rendered as CSV, JSON or SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

/// Viridis sampled at eight evenly spaced points, low to high.
pub const RAMP: [[u8; 3]; 8] = [
    [0x44, 0x01, 0x54],
    [0x46, 0x32, 0x7e],
    [0x36, 0x5c, 0x8d],
    [0x27, 0x7f, 0x8e],
    [0x1f, 0xa1, 0x87],
    [0x4a, 0xc1, 0x6d],
    [0xa0, 0xda, 0x39],
    [0xfd, 0xe7, 0x25],
];

const MISSING_FILL: &str = "#cccccc";

/// Colour at `t ∈ [0, 1]` (clamped): linear interpolation between the two
/// neighbouring ramp stops, channels rounded to nearest.
pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let pos = t * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = pos - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let (a, b) = (RAMP[i][c] as f64, RAMP[i + 1][c] as f64);
        out[c] = (a + (b - a) * f).round() as u8;
    }
    out
}

pub fn hex_color(rgb: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(Error::Config(format!("unknown heatmap format `{other}`"))),
        }
    }
}

/// A rectangular matrix with labelled axes; `None` marks a missing or
/// failed cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub title: String,
    pub row_axis: String,
    pub col_axis: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    /// Colour range; defaults to the finite min and max.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<(f64, f64)>,
}

impl Heatmap {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.values[0].is_empty() {
            return Err(Error::Config("heatmap matrix is empty".into()));
        }
        let cols = self.values[0].len();
        if self.values.iter().any(|r| r.len() != cols) {
            return Err(Error::Config("heatmap matrix is not rectangular".into()));
        }
        if self.row_labels.len() != self.values.len() || self.col_labels.len() != cols {
            return Err(Error::Config(format!(
                "{} row / {} column labels for a {}×{} matrix",
                self.row_labels.len(),
                self.col_labels.len(),
                self.values.len(),
                cols
            )));
        }
        Ok(())
    }

    pub fn color_range(&self) -> (f64, f64) {
        if let Some(r) = self.range {
            return r;
        }
        let finite = self.values.iter().flatten().flatten().copied().filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if lo > hi {
            (0.0, 1.0)
        } else {
            (lo, hi)
        }
    }

    /// Fill colour of one value under this map's colour range.
    pub fn fill(&self, v: Option<f64>) -> String {
        match v {
            Some(v) if v.is_finite() => {
                let (lo, hi) = self.color_range();
                let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
                hex_color(ramp_color(t))
            }
            _ => MISSING_FILL.to_string(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        self.validate()?;
        let mut out = String::new();
        out.push_str(&csv_field(&format!("{}\\{}", self.row_axis, self.col_axis)));
        for c in &self.col_labels {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.values) {
            out.push_str(&csv_field(label));
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let mut s = serde_json::to_string_pretty(self).expect("heatmap serializes");
        s.push('\n');
        Ok(s)
    }

    pub fn to_svg(&self) -> Result<String> {
        self.validate()?;
        const CELL: usize = 56;
        const LEFT: usize = 96;
        const TOP: usize = 56;
        const LEGEND_W: usize = 18;
        let (rows, cols) = (self.values.len(), self.values[0].len());
        let grid_w = cols * CELL;
        let grid_h = rows * CELL;
        let legend_x = LEFT + grid_w + 32;
        let width = legend_x + LEGEND_W + 72;
        let height = TOP + grid_h + 56;
        let (lo, hi) = self.color_range();

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + grid_w / 2,
            xml_escape(&self.title)
        );
        for (j, label) in self.col_labels.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                LEFT + j * CELL + CELL / 2,
                TOP - 8,
                xml_escape(label)
            );
        }
        for (i, label) in self.row_labels.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
                LEFT - 8,
                TOP + i * CELL + CELL / 2,
                xml_escape(label)
            );
        }
        for (i, row) in self.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let (x, y) = (LEFT + j * CELL, TOP + i * CELL);
                let _ = writeln!(
                    s,
                    r#"<rect class="cell" data-row="{i}" data-col="{j}" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="white"/>"#,
                    self.fill(v)
                );
                let text = match v {
                    Some(v) if v.is_finite() => format!("{v:.2}"),
                    _ => "n/a".to_string(),
                };
                let dark = v.is_some_and(|v| v.is_finite() && hi > lo && (v - lo) / (hi - lo) < 0.6);
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" dominant-baseline="middle" fill="{}">{text}</text>"#,
                    x + CELL / 2,
                    y + CELL / 2,
                    if dark { "white" } else { "black" }
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + grid_w / 2,
            TOP + grid_h + 28,
            xml_escape(&self.col_axis)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            TOP + grid_h / 2,
            TOP + grid_h / 2,
            xml_escape(&self.row_axis)
        );
        // legend: the ramp stops, high at the top
        let _ = writeln!(s, r#"<defs><linearGradient id="ramp" x1="0" y1="1" x2="0" y2="0">"#);
        for (k, stop) in RAMP.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<stop offset="{}" stop-color="{}"/>"#,
                k as f64 / (RAMP.len() - 1) as f64,
                hex_color(*stop)
            );
        }
        let _ = writeln!(s, "</linearGradient></defs>");
        let _ = writeln!(
            s,
            r#"<rect class="legend" x="{legend_x}" y="{TOP}" width="{LEGEND_W}" height="{grid_h}" fill="url(#ramp)"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" dominant-baseline="middle">{hi:.3}</text>"#,
            legend_x + LEGEND_W + 6,
            TOP
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" dominant-baseline="middle">{lo:.3}</text>"#,
            legend_x + LEGEND_W + 6,
            TOP + grid_h
        );
        s.push_str("</svg>\n");
        Ok(s)
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
            Format::Svg => self.to_svg(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>, format: Format) -> Result<()> {
        let path = path.as_ref();
        let text = self.render(format)?;
        fs::write(path, text).at(path)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
