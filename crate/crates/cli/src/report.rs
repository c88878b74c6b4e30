//! Per-trial result tables, their aggregates, and CSV/SVG output.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Method label of the empirical worst-case reference rows.
pub const REFERENCE: &str = "worst_case";

/// Half-width multiplier of a 95% normal confidence interval.
pub const CI_Z: f64 = 1.96;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed table: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Evaluate,
    Learn,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Evaluate => "evaluate",
            Task::Learn => "learn",
        }
    }
}

/// One method's outcome in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub method: String,
    pub trial: usize,
    pub seed: u64,
    /// `None` on success, the error message otherwise.
    pub error: Option<String>,
    /// Estimate (evaluation) or worst test-environment return (learning), normalized reward scale.
    pub value: Option<f64>,
    /// `value` on the original reward scale.
    pub value_original: Option<f64>,
    /// Learning only: normalized return on each test environment, in table order.
    pub env_values: Vec<Option<f64>>,
}

impl TrialRow {
    pub fn ok(method: &str, trial: usize, seed: u64, value: f64, value_original: f64) -> Self {
        Self {
            method: method.into(),
            trial,
            seed,
            error: None,
            value: Some(value),
            value_original: Some(value_original),
            env_values: Vec::new(),
        }
    }

    pub fn failed(method: &str, trial: usize, seed: u64, error: impl ToString, envs: usize) -> Self {
        Self {
            method: method.into(),
            trial,
            seed,
            error: Some(error.to_string()),
            value: None,
            value_original: None,
            env_values: vec![None; envs],
        }
    }

    pub fn status(&self) -> String {
        match &self.error {
            None => "ok".into(),
            Some(e) => format!("failed: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub task: Task,
    /// Test-environment labels for the per-environment columns.
    pub envs: Vec<String>,
    pub rows: Vec<TrialRow>,
}

/// Mean, standard error and 95% half-width of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over √n; absent with fewer than two values.
    pub se: Option<f64>,
    pub ci: Option<f64>,
}

pub fn stats(values: &[f64]) -> Option<Stats> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    // Shifting by the first value keeps identical inputs exact.
    let base = values[0];
    let mean = base + values.iter().map(|v| v - base).sum::<f64>() / n as f64;
    let se = (n > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt() / (n as f64).sqrt()
    });
    Some(Stats { n, mean, se, ci: se.map(|s| CI_Z * s) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub failures: usize,
    pub normalized: Option<Stats>,
    pub original: Option<Stats>,
}

/// Aggregates per method, in first-appearance order.
pub fn summarize(rows: &[TrialRow]) -> Vec<Summary> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let mine: Vec<&TrialRow> = rows.iter().filter(|r| r.method == m).collect();
            let norm: Vec<f64> = mine.iter().filter_map(|r| r.value).collect();
            let orig: Vec<f64> = mine.iter().filter_map(|r| r.value_original).collect();
            Summary {
                method: m.to_string(),
                failures: mine.iter().filter(|r| r.error.is_some()).count(),
                normalized: stats(&norm),
                original: stats(&orig),
            }
        })
        .collect()
}

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_num(s: &str) -> Result<Option<f64>, ReportError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| ReportError::Malformed(format!("bad number `{s}`")))
}

const FIXED_COLUMNS: [&str; 8] =
    ["task", "method", "trial", "seed", "status", "value", "value_clipped", "value_original"];

impl ResultTable {
    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(self.envs.iter().map(|e| format!("env:{e}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                self.task.name().to_string(),
                r.method.clone(),
                r.trial.to_string(),
                r.seed.to_string(),
                r.status(),
                num(r.value),
                num(r.value.map(|v| v.clamp(0.0, 1.0))),
                num(r.value_original),
            ];
            for k in 0..self.envs.len() {
                rec.push(num(r.env_values.get(k).copied().flatten()));
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| ReportError::Malformed(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| ReportError::Malformed(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self, ReportError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers()?.clone();
        if header.len() < FIXED_COLUMNS.len() || header.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b) {
            return Err(ReportError::Malformed("unexpected header".into()));
        }
        let envs: Vec<String> =
            header.iter().skip(FIXED_COLUMNS.len()).map(|h| h.strip_prefix("env:").unwrap_or(h).to_string()).collect();
        let mut task = Task::Evaluate;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            task = match &rec[0] {
                "evaluate" => Task::Evaluate,
                "learn" => Task::Learn,
                other => return Err(ReportError::Malformed(format!("unknown task `{other}`"))),
            };
            let bad = |f: &str| ReportError::Malformed(format!("bad {f}"));
            let status = &rec[4];
            let error = if status == "ok" {
                None
            } else {
                Some(status.strip_prefix("failed: ").ok_or_else(|| bad("status"))?.to_string())
            };
            rows.push(TrialRow {
                method: rec[1].to_string(),
                trial: rec[2].parse().map_err(|_| bad("trial"))?,
                seed: rec[3].parse().map_err(|_| bad("seed"))?,
                error,
                value: parse_num(&rec[5])?,
                value_original: parse_num(&rec[7])?,
                env_values: (FIXED_COLUMNS.len()..rec.len()).map(|i| parse_num(&rec[i])).collect::<Result<_, _>>()?,
            });
        }
        Ok(Self { task, envs, rows })
    }
}

pub fn summary_csv(summaries: &[Summary]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "n",
        "failures",
        "mean",
        "se",
        "ci_half_width",
        "mean_clipped",
        "mean_original",
        "se_original",
        "ci_half_width_original",
    ])?;
    for s in summaries {
        let n = s.normalized.map_or(0, |st| st.n);
        w.write_record([
            s.method.clone(),
            n.to_string(),
            s.failures.to_string(),
            num(s.normalized.map(|st| st.mean)),
            num(s.normalized.and_then(|st| st.se)),
            num(s.normalized.and_then(|st| st.ci)),
            num(s.normalized.map(|st| st.mean.clamp(0.0, 1.0))),
            num(s.original.map(|st| st.mean)),
            num(s.original.and_then(|st| st.se)),
            num(s.original.and_then(|st| st.ci)),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Malformed(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ReportError::Malformed(e.to_string()))
}

/// Bar chart of normalized means clipped to `[0, 1]` with CI whiskers and the reference band.
pub fn svg_plot(title: &str, summaries: &[Summary]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const LEFT: f64 = 50.0;
    const TOP: f64 = 30.0;
    const PLOT_H: f64 = 240.0;
    let y_of = |v: f64| TOP + PLOT_H * (1.0 - v.clamp(0.0, 1.0));
    let bars: Vec<&Summary> = summaries.iter().filter(|s| s.method != REFERENCE).collect();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ =
        writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, xml_escape(title));
    if let Some(st) = summaries.iter().find(|s| s.method == REFERENCE).and_then(|s| s.normalized) {
        let half = st.ci.unwrap_or(0.0);
        let (top, bottom) = (y_of(st.mean + half), y_of(st.mean - half));
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="#f4a582" fill-opacity="0.4"/>"##,
            W - LEFT - 10.0,
            (bottom - top).max(1.0)
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="#b2182b">worst case</text>"##,
            W - 12.0,
            top - 3.0
        );
    }
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#, TOP + PLOT_H);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, TOP + PLOT_H, W - 10.0);
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.2}</text>"#, LEFT - 5.0, y_of(v) + 4.0);
    }
    let slot = (W - LEFT - 10.0) / bars.len().max(1) as f64;
    for (i, b) in bars.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + PLOT_H + 16.0,
            xml_escape(&b.method)
        );
        let Some(st) = b.normalized else { continue };
        let y = y_of(st.mean);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#4393c3"/>"##,
            cx - slot * 0.3,
            slot * 0.6,
            TOP + PLOT_H - y
        );
        if let Some(ci) = st.ci {
            let (y1, y2) = (y_of(st.mean + ci), y_of(st.mean - ci));
            let _ = writeln!(s, r#"<line x1="{cx:.2}" y1="{y1:.2}" x2="{cx:.2}" y2="{y2:.2}" stroke="black"/>"#);
            for yy in [y1, y2] {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="black"/>"#,
                    cx - 5.0,
                    cx + 5.0
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write(path: &Path, text: &str) -> Result<(), ReportError> {
    std::fs::write(path, text).map_err(|source| ReportError::Write { path: path.display().to_string(), source })
}

/// Writes `<task>.csv`, `<task>_summary.csv` and, when asked, `<task>.svg` into `dir`.
pub fn emit_outputs(table: &ResultTable, dir: &Path, plot: bool, title: &str) -> Result<Vec<Summary>, ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Write { path: dir.display().to_string(), source })?;
    let name = table.task.name();
    let summaries = summarize(&table.rows);
    write(&dir.join(format!("{name}.csv")), &table.to_csv()?)?;
    write(&dir.join(format!("{name}_summary.csv")), &summary_csv(&summaries)?)?;
    if plot {
        write(&dir.join(format!("{name}.svg")), &svg_plot(title, &summaries))?;
    }
    Ok(summaries)
}
