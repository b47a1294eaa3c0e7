//! Report container and its JSON, CSV and SVG renderings.
//!
//! A characterization run writes `report.json` plus one CSV per table into
//! `<out>/<protocol>/`. [`render_dir`] turns existing reports into SVG
//! plots and refreshed CSV tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::binio::write_atomic;
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row.iter().map(|v| v.is_finite().then_some(*v)).collect());
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|v| v.map(|x| format!("{x}")).unwrap_or_default())
                .collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub points: Vec<[f64; 2]>,
}

impl Curve {
    pub fn new(name: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            name: name.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            log_y: false,
            points: Vec::new(),
        }
    }

    pub fn log_x(mut self) -> Self {
        self.log_x = true;
        self
    }

    pub fn push(&mut self, x: f64, y: f64) {
        let ok = |v: f64, log: bool| v.is_finite() && (!log || v > 0.0);
        if ok(x, self.log_x) && ok(y, self.log_y) {
            self.points.push([x, y]);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub protocol: String,
    pub config_hash: String,
    pub seed: u64,
    pub metrics: Value,
    pub tables: Vec<Table>,
    pub curves: Vec<Curve>,
}

impl Report {
    pub fn to_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("report serializes"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))
    }

    /// Write `report.json` and the CSV tables under `dir/<protocol>/`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let sub = dir.join(&self.protocol);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        write_atomic(&sub.join(REPORT_FILE), self.to_json().as_bytes())?;
        for t in &self.tables {
            write_atomic(&sub.join(format!("{}.csv", t.name)), t.to_csv().as_bytes())?;
        }
        Ok(sub)
    }
}

/// Pretty JSON with keys in sorted order and a trailing newline.
pub fn canonical_json(v: &Value) -> String {
    // serde_json's map is ordered by key unless `preserve_order` is enabled
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s
}

/// Line plot of one curve.
pub fn svg_plot(c: &Curve) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 30.0;
    const B: f64 = 50.0;
    let tx = |v: f64| if c.log_x { v.log10() } else { v };
    let ty = |v: f64| if c.log_y { v.log10() } else { v };
    let span = |vals: Vec<f64>| {
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = span(c.points.iter().map(|p| tx(p[0])).collect());
    let (y0, y1) = span(c.points.iter().map(|p| ty(p[1])).collect());
    let px = |v: f64| L + (tx(v) - x0) / (x1 - x0) * (W - L - R);
    let py = |v: f64| H - B - (ty(v) - y0) / (y1 - y0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(&c.name)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{L} {T} V{} H{}" fill="none" stroke="black"/>"#,
        H - B,
        W - R
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let gx = L + f * (W - L - R);
        let gy = H - B - f * (H - T - B);
        let lab = |v: f64, log: bool| if log { format!("1e{v:.2}") } else { format!("{v:.4}") };
        let _ = writeln!(
            s,
            r#"<text x="{gx:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
            H - B + 15.0,
            lab(xv, c.log_x)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{gy:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
            L - 5.0,
            lab(yv, c.log_y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        (L + W - R) / 2.0,
        H - 10.0,
        escape(&c.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0,
        escape(&c.y_label)
    );
    if !c.points.is_empty() {
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p[0]), py(p[1])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Find `report.json` in `dir` or its immediate subdirectories.
pub fn find_reports(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    if dir.join(REPORT_FILE).is_file() {
        found.push(dir.join(REPORT_FILE));
    }
    let mut subs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(REPORT_FILE).is_file())
        .collect();
    subs.sort();
    found.extend(subs.into_iter().map(|p| p.join(REPORT_FILE)));
    Ok(found)
}

/// Render every report found under `dir`; returns the files written.
pub fn render_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let reports = find_reports(dir)?;
    if reports.is_empty() {
        return Err(Error::Precondition(format!("no {REPORT_FILE} under {}", dir.display())));
    }
    let mut written = Vec::new();
    for path in reports {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let report = Report::from_json(&text)?;
        let base = path.parent().expect("report has a parent");
        for c in &report.curves {
            let p = base.join(format!("{}.svg", c.name));
            write_atomic(&p, svg_plot(c).as_bytes())?;
            written.push(p);
        }
        for t in &report.tables {
            let p = base.join(format!("{}.csv", t.name));
            write_atomic(&p, t.to_csv().as_bytes())?;
            written.push(p);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut t = Table::new("levels", &["u", "mean"]);
        t.push(&[0.1, 2.0]);
        t.push(&[0.2, f64::NAN]);
        let mut c = Curve::new("residual", "photons", "DN");
        c.push(1.0, 0.5);
        c.push(2.0, -0.5);
        Report {
            protocol: "linearity".into(),
            config_hash: "00".into(),
            seed: 1,
            metrics: serde_json::json!({"z": 1, "a": 2}),
            tables: vec![t],
            curves: vec![c],
        }
    }

    #[test]
    fn json_keys_sorted_and_round_trip() {
        let r = sample();
        let j = r.to_json();
        assert!(j.find("\"a\"").unwrap() < j.find("\"z\"").unwrap());
        assert_eq!(Report::from_json(&j).unwrap(), r);
    }

    #[test]
    fn csv_blank_for_undefined() {
        assert_eq!(sample().tables[0].to_csv(), "u,mean\n0.1,2\n0.2,\n");
    }

    #[test]
    fn svg_has_one_polyline() {
        let svg = svg_plot(&sample().curves[0]);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.starts_with("<svg"));
    }
}
