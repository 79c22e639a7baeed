//! Table, CSV and SVG rendering. All output is a pure function of its inputs
//! so reruns are byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use cood_core::eval::{RejectionTable, RocPoint};

use crate::error::{read_file, CliError, Result};

pub const REJECTION_HEADERS: [&str; 5] = [
    "Dataset, category",
    "Number of images",
    "% OOD detected - COOD",
    "% OOD detected - Max(linear)",
    "COOD - mean, stdev, median",
];

pub const DETECTION_HEADERS: [&str; 6] = [
    "OOD set",
    "Number of images",
    "COOD TPR @1%FPR",
    "Best measure",
    "Best measure TPR @1%FPR",
    "% rejected at pooled operating point",
];

pub const SHAP_HEADERS: [&str; 3] = ["measure", "category", "mean_abs_phi"];

pub const ROC_HEADERS: [&str; 3] = ["fpr", "tpr", "threshold"];

/// A header row plus string cells; empty strings are blank cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    /// Column-aligned GitHub markdown.
    pub fn markdown(&self) -> String {
        let esc = |s: &str| s.replace('|', "\\|");
        let cols = self.headers.len();
        let mut width: Vec<usize> = self.headers.iter().map(|h| esc(h).chars().count().max(3)).collect();
        for r in &self.rows {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(esc(c).chars().count());
            }
        }
        let line = |cells: &mut dyn Iterator<Item = String>| {
            let body: Vec<String> = cells.enumerate().map(|(i, c)| format!("{c:<w$}", w = width[i])).collect();
            format!("| {} |\n", body.join(" | "))
        };
        let mut out = line(&mut self.headers.iter().map(|h| esc(h)));
        out += &line(&mut (0..cols).map(|i| "-".repeat(width[i])));
        for r in &self.rows {
            out += &line(&mut r.iter().map(|c| esc(c)));
        }
        out
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let internal = |e: csv::Error| CliError::Internal(e.to_string());
        w.write_record(&self.headers).map_err(internal)?;
        for r in &self.rows {
            w.write_record(r).map_err(internal)?;
        }
        w.into_inner().map_err(|e| CliError::Internal(e.to_string()))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let headers = r.headers().map_err(|e| CliError::csv(path, e))?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .map_err(|e| CliError::csv(path, e))?;
        Ok(Self { headers, rows })
    }
}

pub fn fixed(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}

pub fn opt_fixed(v: Option<f64>, decimals: usize) -> String {
    v.map(|v| fixed(v, decimals)).unwrap_or_default()
}

/// Rejection table with the COOD statistics and the Max(linear) baseline
/// rejection per category. `baseline` must list the same categories.
pub fn rejection_table(cood: &RejectionTable, baseline: &RejectionTable, decimals: usize) -> Table {
    let mut t = Table::new(&REJECTION_HEADERS);
    for (c, b) in cood.rows.iter().zip(&baseline.rows) {
        debug_assert_eq!(c.category, b.category);
        let stats = match (c.mean, c.stdev, c.median) {
            (Some(m), Some(s), Some(md)) => format!("{m:.3}, {s:.3}, {md:.3}"),
            _ => String::new(),
        };
        t.push(vec![
            c.category.clone(),
            c.count.to_string(),
            opt_fixed(c.pct_rejected, decimals),
            opt_fixed(b.pct_rejected, decimals),
            stats,
        ]);
    }
    t
}

pub fn roc_table(points: &[RocPoint]) -> Table {
    let mut t = Table::new(&ROC_HEADERS);
    for p in points {
        t.push(vec![p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()]);
    }
    t
}

pub fn config_block(config_json: &str) -> String {
    format!("## Configuration\n\n```json\n{}```\n", config_json)
}

/// ROC step curve restricted to `fpr <= x_max`, with a dash-dot vertical
/// marker at `marker_fpr`.
pub fn roc_svg(points: &[(f64, f64)], x_max: f64, marker_fpr: f64, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 60.0;
    let px = |fpr: f64| L + (fpr / x_max).min(1.0) * (W - L - R);
    let py = |tpr: f64| H - B - tpr * (H - T - B);

    // Clip at x_max, interpolating the crossing segment.
    let mut clipped: Vec<(f64, f64)> = Vec::new();
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if clipped.is_empty() {
            clipped.push(a);
        }
        if b.0 <= x_max {
            clipped.push(b);
        } else {
            if a.0 < x_max {
                let t = (x_max - a.0) / (b.0 - a.0);
                clipped.push((x_max, a.1 + t * (b.1 - a.1)));
            }
            break;
        }
    }
    if clipped.is_empty() {
        clipped.extend(points.first().copied());
    }

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, xml_escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{L}" y="{T}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        W - L - R,
        H - T - B
    );
    for i in 0..=5 {
        let f = x_max * i as f64 / 5.0;
        let x = px(f);
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, H - B, H - B + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{:.1}%</text>"#, H - B + 20.0, 100.0 * f);
        let tpr = i as f64 / 5.0;
        let y = py(tpr);
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{L}" y2="{y:.1}" stroke="black"/>"#, L - 5.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}%</text>"#, L - 8.0, y + 4.0, 100.0 * tpr);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">False positive rate</text>"#, (L + W - R) / 2.0, H - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">True positive rate</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    );
    let mx = px(marker_fpr);
    let _ = writeln!(
        s,
        r#"<line x1="{mx:.1}" y1="{T}" x2="{mx:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="6 3 1 3"/>"#,
        H - B
    );
    let pts: Vec<String> = clipped.iter().map(|&(f, t)| format!("{:.2},{:.2}", px(f), py(t))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, pts.join(" "));
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
