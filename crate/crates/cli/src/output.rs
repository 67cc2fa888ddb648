//! Result-file plumbing: the run manifest, versioned CSV/JSON emission, and
//! the convenience SVG line chart.
//!
//! Every command writes its result files plus a `manifest.json` describing
//! the run (command, resolved parameters, seed, tool version, timestamps,
//! output list). CSV files carry a first-line comment naming their schema
//! and the manifest, so any file found on disk can be traced to the run
//! that produced it. CSV content is deterministic: no timestamps, fixed
//! column orders, fixed float formatting.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use aoi_core::{Error, Result};
use serde::Serialize;

/// Collects output files for one command invocation and finishes by
/// writing the manifest that references them.
pub struct OutDir {
    dir: PathBuf,
    outputs: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    fn record(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        self.record(name);
        Ok(())
    }

    /// Writes a CSV file: schema comment line, header row, data rows.
    pub fn write_csv(&mut self, name: &str, schema: &str, header: &str, rows: &[String]) -> Result<()> {
        let mut buf = Vec::with_capacity(rows.len() * 64 + 128);
        writeln!(buf, "# aoi-csv {schema} manifest=manifest.json").unwrap();
        writeln!(buf, "{header}").unwrap();
        for row in rows {
            writeln!(buf, "{row}").unwrap();
        }
        self.write_bytes(name, &buf)
    }

    /// Writes a JSON result file wrapping `value` with its schema name and
    /// a reference to the manifest.
    pub fn write_json<T: Serialize>(&mut self, name: &str, schema: &str, value: &T) -> Result<()> {
        let doc = serde_json::json!({
            "schema": schema,
            "manifest": "manifest.json",
            "result": value,
        });
        let mut bytes = serde_json::to_vec_pretty(&doc).expect("serializable result");
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn write_svg(&mut self, name: &str, svg: &str) -> Result<()> {
        self.write_bytes(name, svg.as_bytes())
    }

    /// Writes `manifest.json` describing this run. Call last, after all
    /// outputs are recorded.
    pub fn finish(
        mut self,
        command: &str,
        seed: Option<u64>,
        parameters: serde_json::Value,
    ) -> Result<PathBuf> {
        let manifest = serde_json::json!({
            "schema": "aoi-manifest/v1",
            "command": command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "tool_version": env!("CARGO_PKG_VERSION"),
            "created_utc": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            "seed": seed,
            "parameters": parameters,
            "outputs": self.outputs,
        });
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("serializable manifest");
        bytes.push(b'\n');
        self.outputs.clear();
        let path = self.dir.join("manifest.json");
        fs::write(&path, bytes).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(path)
    }
}

/// Probabilities print with fixed six-decimal precision so grid coordinates
/// are stable, comparable strings.
pub fn fmt_prob(p: f64) -> String {
    format!("{p:.6}")
}

/// General floats print in Rust's shortest round-trip form; absent values
/// (failed cells) print as empty fields.
pub fn fmt_opt(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v}"),
        _ => String::new(),
    }
}

pub fn fmt_f64(x: f64) -> String {
    fmt_opt(Some(x))
}

/// Minimal self-contained SVG line chart: one polyline per labeled series,
/// linear axes with min/max tick labels. A plotting convenience only; the
/// CSVs are the contractual outputs.
pub fn svg_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const ML: f64 = 64.0;
    const MR: f64 = 16.0;
    const MT: f64 = 32.0;
    const MB: f64 = 48.0;
    const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (x0, x1) = pts
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &(x, _)| (lo.min(x), hi.max(x)));
    let (y0, y1) = pts
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &(_, y)| (lo.min(y), hi.max(y)));
    let (x0, x1) = if x0 < x1 { (x0, x1) } else { (x0 - 0.5, x0 + 0.5) };
    let (y0, y1) = if y0 < y1 { (y0, y1) } else { (y0 - 0.5, y0 + 0.5) };
    let sx = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let sy = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        W / 2.0
    ));
    s.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#333\"/>\n",
        H - MB,
        W - MR
    ));
    s.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"#333\"/>\n",
        H - MB
    ));
    s.push_str(&format!(
        "<text x=\"{ML}\" y=\"{}\" text-anchor=\"middle\">{x0:.3}</text>\n",
        H - MB + 16.0
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x1:.3}</text>\n",
        W - MR,
        H - MB + 16.0
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y0:.2}</text>\n",
        ML - 6.0,
        H - MB
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y1:.2}</text>\n",
        ML - 6.0,
        MT + 4.0
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n",
        (ML + W - MR) / 2.0,
        H - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{y_label}</text>\n",
        (MT + H - MB) / 2.0
    ));

    for (i, (label, data)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = data
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if !path.is_empty() {
            s.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                path.join(" ")
            ));
        }
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>\n",
            W - MR - 120.0,
            MT + 16.0 * (i as f64 + 1.0)
        ));
    }
    s.push_str("</svg>\n");
    s
}
