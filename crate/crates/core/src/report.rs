//! Comparison tables and energy-vs-step plots over finished run directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub name: String,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    /// `(step, energy_mean)` from `log.csv`.
    pub curve: Vec<(f64, f64)>,
}

#[derive(Debug, Default)]
pub struct Report {
    pub runs: Vec<RunSummary>,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct EnergyFile {
    mean: f64,
    stderr: f64,
}

fn read_curve(path: &Path) -> std::result::Result<Vec<(f64, f64)>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty file")?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or(format!("no `{name}` column"));
    let (is, ie) = (col("step")?, col("energy_mean")?);
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let get = |j: usize| f.get(j).and_then(|s| s.parse::<f64>().ok());
        match (get(is), get(ie)) {
            (Some(s), Some(e)) => out.push((s, e)),
            _ => return Err(format!("malformed row {}", i + 2)),
        }
    }
    Ok(out)
}

/// Collects energies and curves. Missing or corrupt files produce a warning
/// and a partial entry, never an error.
pub fn collect(dirs: &[PathBuf]) -> Report {
    let mut dirs = dirs.to_vec();
    dirs.sort_by(|a, b| a.file_name().cmp(&b.file_name()).then(a.cmp(b)));
    let mut report = Report::default();
    for dir in dirs {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string());
        let mut run = RunSummary { dir: dir.clone(), name, mean: None, stderr: None, curve: Vec::new() };
        match fs::read_to_string(dir.join("energy.json")).map_err(|e| e.to_string()).and_then(|t| {
            serde_json::from_str::<EnergyFile>(&t).map_err(|e| e.to_string())
        }) {
            Ok(e) => {
                run.mean = Some(e.mean);
                run.stderr = Some(e.stderr);
            }
            Err(e) => report.warnings.push(format!("{}: energy.json: {e}", dir.display())),
        }
        match read_curve(&dir.join("log.csv")) {
            Ok(c) => run.curve = c,
            Err(e) => report.warnings.push(format!("{}: log.csv: {e}", dir.display())),
        }
        report.runs.push(run);
    }
    report
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Report {
    pub fn table_csv(&self) -> String {
        let mut s = String::from("run,mean,stderr,steps\n");
        for r in &self.runs {
            writeln!(s, "{},{},{},{}", r.name, opt(r.mean), opt(r.stderr), r.curve.len()).unwrap();
        }
        s
    }

    pub fn curves_csv(&self) -> String {
        let mut s = String::from("run,step,energy_mean\n");
        for r in &self.runs {
            for (step, e) in &r.curve {
                writeln!(s, "{},{step},{e}", r.name).unwrap();
            }
        }
        s
    }

    /// A self-contained SVG 1.1 line chart with one polyline per run that
    /// has a curve. The y range is cut at the 2nd and 98th percentiles so
    /// early transients do not flatten the plot.
    pub fn svg(&self) -> String {
        const W: f64 = 800.0;
        const H: f64 = 500.0;
        const M: f64 = 60.0;
        let runs: Vec<&RunSummary> = self.runs.iter().filter(|r| !r.curve.is_empty()).collect();
        let mut ys: Vec<f64> = runs.iter().flat_map(|r| r.curve.iter().map(|p| p.1)).filter(|y| y.is_finite()).collect();
        ys.sort_by(f64::total_cmp);
        let (mut y0, mut y1) = if ys.is_empty() {
            (0.0, 1.0)
        } else {
            (ys[ys.len() * 2 / 100], ys[(ys.len() * 98 / 100).min(ys.len() - 1)])
        };
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let x1 = runs.iter().flat_map(|r| r.curve.iter().map(|p| p.0)).fold(1.0, f64::max);
        let px = |x: f64| M + (W - 2.0 * M) * x / x1;
        let py = |y: f64| M + (H - 2.0 * M) * (1.0 - (y.clamp(y0, y1) - y0) / (y1 - y0));
        let palette = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
        let mut s = String::new();
        writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        )
        .unwrap();
        writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#).unwrap();
        writeln!(
            s,
            r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * M,
            H - 2.0 * M
        )
        .unwrap();
        writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">step</text>"#, W / 2.0, H - 20.0).unwrap();
        writeln!(s, r#"<text x="5" y="{}" font-size="12">{y1:.4}</text>"#, M + 4.0).unwrap();
        writeln!(s, r#"<text x="5" y="{}" font-size="12">{y0:.4}</text>"#, H - M).unwrap();
        for (i, r) in runs.iter().enumerate() {
            let color = palette[i % palette.len()];
            let pts: Vec<String> =
                r.curve.iter().filter(|p| p.1.is_finite()).map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#, pts.join(" ")).unwrap();
            writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
                W - M - 150.0,
                M + 16.0 * (i as f64 + 1.0),
                xml_escape(&r.name)
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        s
    }

    /// Writes `summary.csv`, `curves.csv` and `energy.svg` into `out`.
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out)?;
        fs::write(out.join("summary.csv"), self.table_csv())?;
        fs::write(out.join("curves.csv"), self.curves_csv())?;
        fs::write(out.join("energy.svg"), self.svg())?;
        Ok(())
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
