use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{ParamMetrics, TTest};
use crate::dict::store::sha256_hex;
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// Metrics of one method on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub seed: u64,
    pub metrics: Vec<ParamMetrics>,
    pub runtime_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_version: u32,
    pub name: String,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    pub dataset_hash: String,
    pub config: serde_json::Value,
    pub results: Vec<MethodResult>,
    #[serde(default)]
    pub tests: Vec<NamedTest>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTest {
    pub parameter: String,
    pub a: String,
    pub b: String,
    pub test: TTest,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_hex(config.to_string().as_bytes())
}

impl Report {
    pub fn new(name: impl Into<String>, config: serde_json::Value, dataset_hash: impl Into<String>) -> Self {
        Self {
            report_version: REPORT_VERSION,
            name: name.into(),
            config_hash: config_hash(&config),
            dataset_hash: dataset_hash.into(),
            config,
            results: Vec::new(),
            tests: Vec::new(),
            extra: serde_json::Value::Null,
        }
    }

    pub fn result(&self, method: &str) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }

    /// Aligned table: one row per method, MSE / bias / relative error per parameter.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}  config {}  data {}", self.name, &self.config_hash[..12.min(self.config_hash.len())], short(&self.dataset_hash));
        let names: Vec<&str> = self.results.first().map(|r| r.metrics.iter().map(|m| m.name.as_str()).collect()).unwrap_or_default();
        let mw = self.results.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
        let _ = write!(out, "{:<mw$} {:>5}", "method", "seed");
        for n in &names {
            let _ = write!(out, " {:>12} {:>12} {:>10}", format!("mse({n})"), format!("bias({n})"), format!("rel({n})"));
        }
        let _ = writeln!(out, " {:>9}", "time[s]");
        for r in &self.results {
            let _ = write!(out, "{:<mw$} {:>5}", r.method, r.seed);
            for m in &r.metrics {
                let _ = write!(out, " {:>12.4e} {:>12.4e} {:>10.4}", m.mse, m.bias, m.rel_error);
            }
            let _ = writeln!(out, " {:>9.2}", r.runtime_s);
        }
        for t in &self.tests {
            let _ = writeln!(out, "t-test {} {} vs {}: t={:.4} df={} p={:.4e}{}", t.parameter, t.a, t.b, t.test.t, t.test.df, t.test.p, if t.test.zero_variance { " (zero variance)" } else { "" });
        }
        out
    }

    /// `method,seed,parameter,n,mse,bias,rel_error,runtime_s`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,seed,parameter,n,mse,bias,rel_error,runtime_s\n");
        for r in &self.results {
            for m in &r.metrics {
                let _ = writeln!(out, "{},{},{},{},{:e},{:e},{:e},{}", r.method, r.seed, m.name, m.n, m.mse, m.bias, m.rel_error, r.runtime_s);
            }
        }
        out
    }
}

fn short(h: &str) -> &str {
    &h[..12.min(h.len())]
}

/// Writes `<dir>/<name>.json`, `.txt` and `.csv`. An existing report with
/// different config or dataset hashes is not overwritten unless `force`.
pub fn write_report(dir: &Path, report: &Report, force: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join(format!("{}.json", report.name));
    if json.exists() && !force {
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        if let Ok(old) = serde_json::from_str::<Report>(&text) {
            if old.config_hash != report.config_hash {
                return Err(Error::HashMismatch {
                    what: format!("{} config", json.display()),
                    expected: old.config_hash,
                    found: report.config_hash.clone(),
                });
            }
            if old.dataset_hash != report.dataset_hash {
                return Err(Error::HashMismatch {
                    what: format!("{} dataset", json.display()),
                    expected: old.dataset_hash,
                    found: report.dataset_hash.clone(),
                });
            }
        }
    }
    let write = |ext: &str, body: String| -> Result<()> {
        let p = dir.join(format!("{}.{ext}", report.name));
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("json", serde_json::to_string_pretty(report)?)?;
    write("txt", report.to_text())?;
    write("csv", report.to_csv())
}

pub fn read_report(path: &Path) -> Result<Report> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let r: Report = serde_json::from_str(&text)?;
    if r.report_version != REPORT_VERSION {
        return Err(Error::Data(format!("report version {} is not supported", r.report_version)));
    }
    Ok(r)
}

/// One named polyline for [`svg_plot`].
pub struct Series<'a> {
    pub label: &'a str,
    pub points: &'a [(f64, f64)],
}

/// Minimal static line plot with axes, ticks at the data extremes and a legend.
pub fn svg_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 56.0;
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
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
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    y0 = y0.min(0.0);
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - M, W - M, H - M);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M);
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="{anchor}">{}</text>"#, sx(v), H - M + 14.0, fmt_tick(v));
    }
    for v in [y0, y1] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, M - 4.0, sy(v) + 4.0, fmt_tick(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 14.0, escape(xlabel));
    let _ = writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#, H / 2.0, H / 2.0, escape(ylabel));
    for (i, ser) in series.iter().enumerate() {
        let c = colours[i % colours.len()];
        let path: Vec<String> = ser.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        for p in &path {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{c}"/>"#);
        }
        let ly = M + 14.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{c}" text-anchor="end">{}</text>"#, W - M, escape(ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
