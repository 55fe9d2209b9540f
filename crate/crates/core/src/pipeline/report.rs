//! Run summaries, figure rendering and report regeneration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{DataConfig, RunConfig};
use super::run::fold_seed;
use crate::error::{PrlError, Result};
use crate::ingest::artifact::sha256_hex;
use crate::ingest::tsv::{write_text, Table};

pub const SUMMARY_FILE: &str = "run_summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Classification,
    SurvivalOs,
    SurvivalRfs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub kind: RunKind,
    pub config_hash: String,
    pub seed: u64,
    pub fold_seeds: Vec<u64>,
    pub folds: usize,
    pub gamma: f64,
    pub k: usize,
    pub k_assign: usize,
    pub sample: usize,
    pub deltas: Vec<f64>,
    pub n_clusters: Vec<usize>,
    pub locked_fold: Option<usize>,
    pub metrics: BTreeMap<String, Option<f64>>,
    pub significant: Vec<String>,
    /// Effective settings with every default filled in; data paths omitted.
    pub config: RunConfig,
    /// Digest of this summary with the field itself left empty.
    pub summary_hash: String,
}

impl RunSummary {
    pub fn new(kind: RunKind, cfg: &RunConfig) -> Self {
        let folds = match kind {
            RunKind::Classification => cfg.classify.folds,
            _ => cfg.survival.folds,
        };
        let mut settings = cfg.clone();
        settings.data = DataConfig::default();
        RunSummary {
            kind,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            fold_seeds: (0..folds).map(|f| fold_seed(cfg.seed, f)).collect(),
            folds,
            gamma: cfg.cluster.gamma,
            k: cfg.cluster.k,
            k_assign: cfg.cluster.k_assign,
            sample: cfg.cluster.sample,
            deltas: Vec::new(),
            n_clusters: Vec::new(),
            locked_fold: None,
            metrics: BTreeMap::new(),
            significant: Vec::new(),
            config: settings,
            summary_hash: String::new(),
        }
    }

    fn digest(&self) -> String {
        let mut s = self.clone();
        s.summary_hash.clear();
        sha256_hex(serde_json::to_string(&s).expect("summary serializes").as_bytes())
    }
}

pub fn write_summary(dir: &Path, summary: &RunSummary) -> Result<()> {
    let mut s = summary.clone();
    s.summary_hash = s.digest();
    let mut text = serde_json::to_string_pretty(&s)?;
    text.push('\n');
    write_text(&dir.join(SUMMARY_FILE), &text)
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    if !path.exists() {
        return Err(PrlError::MissingArtifact(format!("{} not found", path.display())));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| PrlError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn fold_files(kind: RunKind) -> &'static [&'static str] {
    match kind {
        RunKind::Classification => &["fit.tsv", "predictions.tsv"],
        _ => &["fit.tsv", "risk.tsv"],
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PrlError::MissingArtifact(format!("{what}: {} not found", path.display())))
    }
}

/// Checks a completed run directory and re-renders its figures from the
/// tables.
pub fn emit_reports(dir: &Path) -> Result<Vec<String>> {
    let summary = read_summary(dir)?;
    for f in 0..summary.folds {
        for name in fold_files(summary.kind) {
            require_file(&dir.join(format!("fold_{f}")).join(name), &format!("fold {f} output"))?;
        }
    }
    let mut written = Vec::new();
    let forest = dir.join("forest.tsv");
    require_file(&forest, "forest table")?;
    write_text(&dir.join("forest.svg"), &forest_svg(&Table::read(&forest)?)?)?;
    written.push("forest.svg".to_string());
    match summary.kind {
        RunKind::Classification => {
            let roc = dir.join("roc.tsv");
            require_file(&roc, "ROC table")?;
            write_text(&dir.join("roc.svg"), &roc_svg(&Table::read(&roc)?)?)?;
            written.push("roc.svg".to_string());
        }
        _ => {
            let km = dir.join("km.tsv");
            require_file(&km, "Kaplan-Meier table")?;
            write_text(&dir.join("km.svg"), &km_svg(&Table::read(&km)?)?)?;
            written.push("km.svg".to_string());
        }
    }
    Ok(written)
}

fn num(t: &Table, line: usize, col: &str, raw: &str) -> Result<f64> {
    if raw == "NA" {
        return Ok(f64::NAN);
    }
    t.parse_field(line, col, raw)
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn svg_open(out: &mut String, w: f64, h: f64, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(out, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>", w / 2.0, escape(title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, xlabel: &str, ylabel: &str, x_range: (f64, f64), y_range: (f64, f64)) {
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD, PAD);
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let px = x0 + f * (x1 - x0);
        let py = y0 - f * (y0 - y1);
        let xv = x_range.0 + f * (x_range.1 - x_range.0);
        let yv = y_range.0 + f * (y_range.1 - y_range.0);
        let _ = writeln!(out, "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", y0 + 16.0, tick(xv));
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", x0 - 6.0, py + 4.0, tick(yv));
    }
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", (x0 + x1) / 2.0, H - 18.0, escape(xlabel));
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn map(v: f64, range: (f64, f64), lo: f64, hi: f64) -> f64 {
    let span = range.1 - range.0;
    if span <= 0.0 {
        return (lo + hi) / 2.0;
    }
    lo + (v - range.0) / span * (hi - lo)
}

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str, dashed: bool) {
    let mut d = String::new();
    for (x, y) in pts {
        let _ = write!(d, "{x:.2},{y:.2} ");
    }
    let dash = if dashed { " stroke-dasharray=\"4 3\"" } else { "" };
    let _ = writeln!(
        out,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>",
        d.trim_end()
    );
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    for (i, (name, color)) in entries.iter().enumerate() {
        let y = PAD + 14.0 * i as f64;
        let x = W - PAD - 150.0;
        let _ = writeln!(out, "<line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"/>", x + 18.0);
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\">{}</text>", x + 24.0, y + 4.0, escape(name));
    }
}

/// Coefficients with 95% Wald intervals, significant rows filled.
pub fn forest_svg(t: &Table) -> Result<String> {
    let (fi, ci, si, pi) = (t.require("feature")?, t.require("coefficient")?, t.require("std_error")?, t.require("p_value")?);
    let mut rows = Vec::new();
    for (line, r) in &t.rows {
        let c = num(t, *line, "coefficient", &r[ci])?;
        let s = num(t, *line, "std_error", &r[si])?;
        let p = num(t, *line, "p_value", &r[pi])?;
        rows.push((r[fi].clone(), c, s, p));
    }
    let row_h = 18.0;
    let h = 2.0 * PAD + row_h * rows.len().max(1) as f64;
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for (_, c, s, _) in &rows {
        if c.is_finite() && s.is_finite() {
            lo = lo.min(c - 1.96 * s);
            hi = hi.max(c + 1.96 * s);
        }
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let (left, right) = (PAD + 90.0, W - PAD);
    let mut out = String::new();
    svg_open(&mut out, W, h, "Coefficients (95% CI)");
    let zx = map(0.0, (lo, hi), left, right);
    let _ = writeln!(out, "<line x1=\"{zx:.2}\" y1=\"{PAD}\" x2=\"{zx:.2}\" y2=\"{:.2}\" stroke=\"#888\" stroke-dasharray=\"3 3\"/>", h - PAD);
    for (i, (name, c, s, p)) in rows.iter().enumerate() {
        let y = PAD + row_h * (i as f64 + 0.5);
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", left - 8.0, y + 4.0, escape(name));
        if !(c.is_finite() && s.is_finite()) {
            continue;
        }
        let a = map(c - 1.96 * s, (lo, hi), left, right);
        let b = map(c + 1.96 * s, (lo, hi), left, right);
        let x = map(*c, (lo, hi), left, right);
        let fill = if *p < crate::stats::SIGNIFICANCE { "black" } else { "white" };
        let _ = writeln!(out, "<line x1=\"{a:.2}\" y1=\"{y:.2}\" x2=\"{b:.2}\" y2=\"{y:.2}\" stroke=\"black\"/>");
        let _ = writeln!(out, "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"7\" height=\"7\" fill=\"{fill}\" stroke=\"black\"/>", x - 3.5, y - 3.5);
    }
    let _ = writeln!(out, "<text x=\"{left:.1}\" y=\"{:.1}\">{}</text>", h - PAD + 18.0, tick(lo));
    let _ = writeln!(out, "<text x=\"{right:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", h - PAD + 18.0, tick(hi));
    out.push_str("</svg>\n");
    Ok(out)
}

/// One ROC curve per fold and cohort.
pub fn roc_svg(t: &Table) -> Result<String> {
    let (fi, ci, xi, yi) = (t.require("fold")?, t.require("cohort")?, t.require("fpr")?, t.require("tpr")?);
    let mut curves: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for (line, r) in &t.rows {
        let x = num(t, *line, "fpr", &r[xi])?;
        let y = num(t, *line, "tpr", &r[yi])?;
        curves.entry((r[ci].clone(), r[fi].clone())).or_default().push((x, y));
    }
    let mut out = String::new();
    svg_open(&mut out, W, H, "ROC by fold");
    axes(&mut out, "False positive rate", "True positive rate", (0.0, 1.0), (0.0, 1.0));
    polyline(&mut out, &[(PAD, H - PAD), (W - PAD, PAD)], "#bbb", true);
    let mut entries = Vec::new();
    for (i, ((cohort, fold), pts)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let px: Vec<(f64, f64)> = pts
            .iter()
            .map(|&(x, y)| (map(x, (0.0, 1.0), PAD, W - PAD), map(y, (0.0, 1.0), H - PAD, PAD)))
            .collect();
        polyline(&mut out, &px, color, cohort != "primary");
        entries.push((format!("{cohort} fold {fold}"), color));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Step curves per risk group.
pub fn km_svg(t: &Table) -> Result<String> {
    let (gi, ti, si) = (t.require("group")?, t.require("time")?, t.require("survival")?);
    let mut curves: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut t_max = 0.0f64;
    for (line, r) in &t.rows {
        let x = num(t, *line, "time", &r[ti])?;
        let y = num(t, *line, "survival", &r[si])?;
        t_max = t_max.max(x);
        curves.entry(r[gi].clone()).or_default().push((x, y));
    }
    if t_max <= 0.0 {
        t_max = 1.0;
    }
    let mut out = String::new();
    svg_open(&mut out, W, H, "Kaplan-Meier by risk group");
    axes(&mut out, "Time", "Survival probability", (0.0, t_max), (0.0, 1.0));
    let mut entries = Vec::new();
    for (i, (group, pts)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut px = Vec::new();
        let mut prev = 1.0;
        px.push((map(0.0, (0.0, t_max), PAD, W - PAD), map(1.0, (0.0, 1.0), H - PAD, PAD)));
        for &(x, y) in pts {
            let sx = map(x, (0.0, t_max), PAD, W - PAD);
            px.push((sx, map(prev, (0.0, 1.0), H - PAD, PAD)));
            px.push((sx, map(y, (0.0, 1.0), H - PAD, PAD)));
            prev = y;
        }
        px.push((W - PAD, map(prev, (0.0, 1.0), H - PAD, PAD)));
        polyline(&mut out, &px, color, false);
        entries.push((group.clone(), color));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Table {
        Table::parse(Path::new("mem.tsv"), text).unwrap()
    }

    #[test]
    fn forest_has_one_row_per_feature() {
        let t = table("feature\tcoefficient\tstd_error\tp_value\tsignificant\ncluster_0\t1\t0.2\t0.001\t1\ncluster_1\t-0.5\t0.3\t0.2\t0\n");
        let svg = forest_svg(&t).unwrap();
        assert_eq!(svg.matches("<rect x=").count(), 2);
        assert!(svg.contains("cluster_1"));
    }

    #[test]
    fn missing_fold_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = RunSummary::new(RunKind::Classification, &RunConfig::default());
        s.folds = 2;
        write_summary(dir.path(), &s).unwrap();
        for name in fold_files(RunKind::Classification) {
            write_text(&dir.path().join("fold_0").join(name), "x\n").unwrap();
        }
        let err = emit_reports(dir.path()).unwrap_err().to_string();
        assert!(err.contains("fold 1"), "{err}");
    }

    #[test]
    fn summary_hash_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let s = RunSummary::new(RunKind::SurvivalOs, &RunConfig::default());
        write_summary(dir.path(), &s).unwrap();
        let a = std::fs::read(dir.path().join(SUMMARY_FILE)).unwrap();
        write_summary(dir.path(), &s).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join(SUMMARY_FILE)).unwrap());
        let back = read_summary(dir.path()).unwrap();
        assert_eq!(back.summary_hash, back.digest());
    }
}
