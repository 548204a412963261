//! Artifacts written by a scenario run: CSV table, key-value summary and an
//! optional SVG chart.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::config::{ScenarioConfig, ScenarioKind};
use crate::error::{Error, Result};

/// Formats like C's `%.16e`: 17 significant digits, signed exponent of at
/// least two digits.
pub fn format_sci(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.16e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Hex SHA-256 of the configuration text.
pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&v| format_sci(v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Column names for element (k, l) of R.
pub fn element_columns(k: usize, l: usize) -> [String; 2] {
    if k < 10 && l < 10 {
        [format!("Re_R{k}{l}"), format!("Im_R{k}{l}")]
    } else {
        [format!("Re_R{k}_{l}"), format!("Im_R{k}_{l}")]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    AtMost,
    AtLeast,
}

/// A pass/fail check against a printed threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub pass: bool,
}

impl Verdict {
    /// Passes iff value ≤ threshold.
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            comparison: Comparison::AtMost,
            pass: value <= threshold,
        }
    }

    /// Passes iff value ≥ threshold.
    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            comparison: Comparison::AtLeast,
            pass: value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub kind: ScenarioKind,
    pub model: String,
    pub units: String,
    pub seed: Option<u64>,
    pub n_samples: Option<usize>,
    pub scalars: Vec<(String, f64)>,
    pub notes: Vec<String>,
    pub verdicts: Vec<Verdict>,
    pub version: &'static str,
    pub config_hash: String,
    /// Printed to stdout only so that summary files stay byte-identical.
    pub wall_clock: Duration,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn scalar(&self, key: &str) -> Option<f64> {
        self.scalars.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &str| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("scenario", &self.name);
        kv("kind", self.kind.as_str());
        if !self.model.is_empty() {
            kv("model", &self.model);
        }
        kv("units", &self.units);
        if let Some(seed) = self.seed {
            kv("seed", &seed.to_string());
        }
        if let Some(n) = self.n_samples {
            kv("n_samples", &n.to_string());
        }
        kv("version", self.version);
        kv("config_sha256", &self.config_hash);
        for (k, v) in &self.scalars {
            kv(k, &format_sci(*v));
        }
        for (i, note) in self.notes.iter().enumerate() {
            kv(&format!("note.{i}"), note);
        }
        for v in &self.verdicts {
            let op = match v.comparison {
                Comparison::AtMost => "<=",
                Comparison::AtLeast => ">=",
            };
            kv(&format!("verdict.{}.value", v.name), &format_sci(v.value));
            kv(&format!("verdict.{}.require", v.name), &format!("{op} {}", format_sci(v.threshold)));
            kv(&format!("verdict.{}.result", v.name), if v.pass { "pass" } else { "fail" });
        }
        kv("overall", if self.passed() { "pass" } else { "fail" });
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn svg_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    /// A self-contained SVG line chart.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const LEFT: f64 = 70.0;
        const RIGHT: f64 = 160.0;
        const TOP: f64 = 40.0;
        const BOTTOM: f64 = 50.0;
        let finite = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in finite {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 <= 0.0 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 <= 0.0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let plot_w = W - LEFT - RIGHT;
        let plot_h = H - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
        let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * plot_h;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + plot_w / 2.0,
            svg_escape(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.3e}</text>"#,
                px(xv),
                TOP + plot_h + 16.0,
                xv
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3e}</text>"#,
                LEFT - 6.0,
                py(yv) + 4.0,
                yv
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + plot_w / 2.0,
            H - 12.0,
            svg_escape(&self.x_label)
        );
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let mut path = String::new();
            let mut pen_down = false;
            for &(x, y) in &s.points {
                if !(x.is_finite() && y.is_finite()) {
                    pen_down = false;
                    continue;
                }
                let _ = write!(path, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, px(x), py(y));
                pen_down = true;
            }
            let _ = writeln!(
                out,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.trim_end()
            );
            let ly = TOP + 14.0 + 18.0 * i as f64;
            let lx = W - RIGHT + 12.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
                lx + 20.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}">{}</text>"#,
                lx + 26.0,
                ly + 4.0,
                svg_escape(&s.name)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Everything a run produces before anything touches the disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub table: Option<Table>,
    pub chart: Option<Chart>,
}

/// Where a run's artifacts go.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactPaths {
    pub csv: Option<PathBuf>,
    pub summary: PathBuf,
    pub svg: Option<PathBuf>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

impl ArtifactPaths {
    /// Output paths from the `[output]` section, resolved against `out_dir`.
    /// CSV and summary default to `<name>.csv` and `<name>.summary`; the
    /// SVG is written only when requested.
    pub fn resolve(cfg: &ScenarioConfig, out_dir: &Path) -> Self {
        let csv = cfg.output.csv.clone().unwrap_or_else(|| format!("{}.csv", cfg.name).into());
        let summary = cfg
            .output
            .summary
            .clone()
            .unwrap_or_else(|| format!("{}.summary", cfg.name).into());
        Self {
            csv: Some(out_dir.join(csv)),
            summary: out_dir.join(summary),
            svg: cfg.output.svg.as_ref().map(|p| out_dir.join(p)),
        }
    }
}

/// Writes the CSV (if the run produced a table), the summary and the SVG
/// (if one was requested).
pub fn write_artifacts(outcome: &RunOutcome, paths: &ArtifactPaths) -> Result<()> {
    if let (Some(table), Some(path)) = (&outcome.table, &paths.csv) {
        write_file(path, &table.to_csv())?;
    }
    write_file(&paths.summary, &outcome.summary.to_text())?;
    if let (Some(chart), Some(path)) = (&outcome.chart, &paths.svg) {
        write_file(path, &chart.to_svg())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_style_scientific_format() {
        assert_eq!(format_sci(0.0), "0.0000000000000000e+00");
        assert_eq!(format_sci(1.0), "1.0000000000000000e+00");
        assert_eq!(format_sci(-0.5), "-5.0000000000000000e-01");
        assert_eq!(format_sci(1e-300), "1.0000000000000000e-300");
        assert_eq!(format_sci(123456.0), "1.2345600000000000e+05");
        assert_eq!(format_sci(f64::NAN), "nan");
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, std::f64::consts::PI * 1e-200, -2.5e307, 5e-324] {
            let s = format_sci(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn element_column_names() {
        assert_eq!(element_columns(0, 1), ["Re_R01".to_string(), "Im_R01".to_string()]);
        assert_eq!(element_columns(2, 11)[0], "Re_R2_11");
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new(vec!["t".into(), "entropy".into()]);
        t.push(vec![0.0, 0.25]);
        assert_eq!(t.to_csv(), "t,entropy\n0.0000000000000000e+00,2.5000000000000000e-01\n");
        assert_eq!(t.column("entropy"), Some(vec![0.25]));
    }

    #[test]
    fn verdicts_treat_nan_as_failure() {
        assert!(!Verdict::at_most("x", f64::NAN, 1.0).pass);
        assert!(Verdict::at_least("x", 2.0, 1.0).pass);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let chart = Chart {
            title: "a < b".into(),
            x_label: "t".into(),
            series: vec![Series {
                name: "S".into(),
                points: vec![(0.0, 0.0), (1.0, f64::NAN), (2.0, 1.0)],
            }],
        };
        let svg = chart.to_svg();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<path").count(), 1);
        assert!(svg.contains("M70.00,"));
    }
}
