//! Result tables: markdown for reading, csv and json-lines for tools.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runner::{read_jsonl, Axis, CellResult, RunnerError, METRICS_FILE, UNUSED};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("LAYOUT_MISMATCH: layout `{layout}` needs one of {needed} to vary across the run")]
    LayoutMismatch { layout: ReportLayout, needed: String },
    #[error("cannot compare reports: {0}")]
    Incomparable(String),
    #[error("report line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no evaluated results in {0}; run `eval` first")]
    NotEvaluated(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Runner(#[from] RunnerError),
}

impl ReportError {
    pub fn code(&self) -> &'static str {
        match self {
            ReportError::LayoutMismatch { .. } => "LAYOUT_MISMATCH",
            ReportError::Incomparable(_) => "AXIS_MISMATCH",
            ReportError::Parse { .. } => "UNPARSEABLE",
            ReportError::NotEvaluated(_) => "NOT_EVALUATED",
            ReportError::Io { .. } => "IO_ERROR",
            ReportError::Runner(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportLayout {
    /// One row per modality set with check marks per modality.
    Modality,
    /// Prompt designs and composite strategies, grouped by model.
    Prompts,
    /// Model comparison (Stage-2, video or audio model).
    Models,
    Sampling,
    Context,
    /// Every cell with every axis.
    Raw,
}

impl ReportLayout {
    pub const ALL: [ReportLayout; 6] = [
        ReportLayout::Modality,
        ReportLayout::Prompts,
        ReportLayout::Models,
        ReportLayout::Sampling,
        ReportLayout::Context,
        ReportLayout::Raw,
    ];

    /// Axes that label rows; at least one must vary.
    pub fn primary_axes(&self) -> &'static [Axis] {
        match self {
            ReportLayout::Modality => &[Axis::Modalities],
            ReportLayout::Prompts => &[Axis::Design, Axis::Strategy],
            ReportLayout::Models => &[Axis::Llm, Axis::Video, Axis::Audio],
            ReportLayout::Sampling => &[Axis::Sampling],
            ReportLayout::Context => &[Axis::Context],
            ReportLayout::Raw => &[],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReportLayout::Modality => "modality",
            ReportLayout::Prompts => "prompts",
            ReportLayout::Models => "models",
            ReportLayout::Sampling => "sampling",
            ReportLayout::Context => "context",
            ReportLayout::Raw => "raw",
        }
    }
}

impl fmt::Display for ReportLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReportLayout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown layout `{s}` (expected modality, prompts, models, sampling, context or raw)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    Markdown,
    Csv,
    JsonLines,
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::JsonLines => "jsonl",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" | "json-lines" => Ok(ReportFormat::JsonLines),
            other => Err(format!("unknown format `{other}` (expected markdown, csv or jsonl)")),
        }
    }
}

/// One table row. Metrics are fractions in [0, 1], unrounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub layout: ReportLayout,
    pub cell_id: String,
    pub axes: BTreeMap<Axis, String>,
    pub precision_s: Option<f64>,
    pub recall_s: Option<f64>,
    pub f_s: Option<f64>,
    pub n_samples: usize,
    pub n_repeats: usize,
    pub invalid_predictions: usize,
    pub missing_units: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub layout: ReportLayout,
    /// Axes with more than one value, in axis order.
    pub swept: Vec<Axis>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    /// Leading columns; rows sharing their values form a group. The prompts
    /// layout groups by design and lists models within; the others group by
    /// the remaining swept axes and list the primary axis within.
    pub fn group_axes(&self) -> Vec<Axis> {
        let primary = self.layout.primary_axes();
        let outer_primary = self.layout == ReportLayout::Prompts;
        self.swept
            .iter()
            .copied()
            .filter(|a| primary.contains(a) == outer_primary)
            .collect()
    }

    pub fn row_axes(&self) -> Vec<Axis> {
        let primary = self.layout.primary_axes();
        match self.layout {
            ReportLayout::Modality => vec![Axis::Modalities],
            ReportLayout::Raw => Axis::ALL.to_vec(),
            ReportLayout::Prompts => self.swept.iter().copied().filter(|a| !primary.contains(a)).collect(),
            _ => self.swept.iter().copied().filter(|a| primary.contains(a)).collect(),
        }
    }

    /// Rows whose best values are compared with each other. In the modality
    /// layout unimodal, bimodal and trimodal rows are separate blocks.
    fn block_key(&self, r: &ReportRow) -> Vec<String> {
        let mut key = group_key(r, &self.group_axes());
        if self.layout == ReportLayout::Modality {
            let m = r.axes.get(&Axis::Modalities).map_or("", String::as_str);
            key.push(m.split('+').filter(|p| !p.is_empty() && *p != UNUSED).count().to_string());
        }
        key
    }
}

/// Axes with at least two distinct used values. An axis that is only unused
/// in some cells (no video model for text-only rows) does not count.
fn swept_axes(rows: &[BTreeMap<Axis, String>]) -> Vec<Axis> {
    Axis::ALL
        .into_iter()
        .filter(|a| {
            rows.iter()
                .filter_map(|r| r.get(a))
                .filter(|v| v.as_str() != UNUSED)
                .collect::<BTreeSet<_>>()
                .len()
                > 1
        })
        .collect()
}

/// Arranges evaluated cells for a layout. Rows keep run order within a
/// group; groups appear in order of first occurrence.
pub fn build_report(results: &[CellResult], layout: ReportLayout) -> Result<Report, ReportError> {
    let axes: Vec<BTreeMap<Axis, String>> = results.iter().map(|r| r.axes.clone()).collect();
    let swept = swept_axes(&axes);
    let primary = layout.primary_axes();
    let present = match layout {
        ReportLayout::Raw => true,
        _ => primary.iter().any(|a| swept.contains(a)),
    };
    if !present {
        return Err(ReportError::LayoutMismatch {
            layout,
            needed: primary.iter().map(|a| a.name()).collect::<Vec<_>>().join(", "),
        });
    }
    let mut rows: Vec<ReportRow> = results
        .iter()
        .map(|r| ReportRow {
            layout,
            cell_id: r.cell_id.clone(),
            axes: r.axes.clone(),
            precision_s: r.metrics.as_ref().map(|m| m.mean_precision_s),
            recall_s: r.metrics.as_ref().map(|m| m.mean_recall_s),
            f_s: r.metrics.as_ref().map(|m| m.mean_f_s),
            n_samples: r.metrics.as_ref().map_or(0, |m| m.n_samples),
            n_repeats: r.metrics.as_ref().map_or(0, |m| m.n_repeats),
            invalid_predictions: r.metrics.as_ref().map_or(0, |m| m.invalid_prediction_count),
            missing_units: r.missing_units,
        })
        .collect();
    let report = Report {
        layout,
        swept,
        rows: Vec::new(),
    };
    let group_axes = report.group_axes();
    let mut first_seen: HashMap<Vec<String>, usize> = HashMap::new();
    for r in &rows {
        let g = group_key(r, &group_axes);
        let n = first_seen.len();
        first_seen.entry(g).or_insert(n);
    }
    rows.sort_by_key(|r| first_seen[&group_key(r, &group_axes)]);
    Ok(Report { rows, ..report })
}

fn group_key(r: &ReportRow, axes: &[Axis]) -> Vec<String> {
    axes.iter().map(|a| r.axes.get(a).cloned().unwrap_or_default()).collect()
}

fn pct(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |v| format!("{:.1}", v * 100.0))
}

fn axis_title(a: Axis) -> &'static str {
    match a {
        Axis::Variant => "Method",
        Axis::Modalities => "Modalities",
        Axis::Llm => "LLM",
        Axis::Video => "Video-LLM",
        Axis::Audio => "Audio-LLM",
        Axis::Design => "Hard Prompt",
        Axis::Strategy => "Strategy",
        Axis::Context => "Context",
        Axis::Sampling => "Sampling",
    }
}

/// Renders a report. Markdown shows percentages with one decimal and marks
/// the best value of each group in bold; csv and json-lines keep full
/// precision.
pub fn render(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::JsonLines => report
            .rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect(),
    }
}

const METRIC_HEADERS: [&str; 3] = ["Precision_s [%]", "Recall_s [%]", "F_s [%]"];

fn render_markdown(report: &Report) -> String {
    let groups = report.group_axes();
    let row_axes = report.row_axes();
    let mut header: Vec<String> = groups.iter().map(|a| axis_title(*a).to_string()).collect();
    if report.layout == ReportLayout::Modality {
        header.extend(["Text", "Video", "Audio"].map(String::from));
    } else {
        header.extend(row_axes.iter().map(|a| axis_title(*a).to_string()));
    }
    header.extend(METRIC_HEADERS.map(String::from));

    // Best value per block and metric, compared at display precision so
    // that ties are all marked.
    let mut best: HashMap<(Vec<String>, usize), String> = HashMap::new();
    for r in &report.rows {
        let k = report.block_key(r);
        for (i, v) in [r.precision_s, r.recall_s, r.f_s].into_iter().enumerate() {
            let Some(v) = v else { continue };
            let entry = best.entry((k.clone(), i)).or_insert_with(|| pct(Some(v)));
            if pct(Some(v)).parse::<f64>().unwrap_or(f64::MIN) > entry.parse::<f64>().unwrap_or(f64::MIN) {
                *entry = pct(Some(v));
            }
        }
    }
    let mark = |s: &str| match s {
        "true" => "✓",
        _ => "×",
    };

    let mut out = String::new();
    out.push_str(&format!("| {} |\n", header.join(" | ")));
    out.push_str(&format!("|{}\n", header.iter().map(|h| if METRIC_HEADERS.contains(&h.as_str()) { "---:|" } else { "---|" }).collect::<String>()));
    for r in &report.rows {
        let mut cells = group_key(r, &groups);
        if report.layout == ReportLayout::Modality {
            let m = r.axes.get(&Axis::Modalities).cloned().unwrap_or_default();
            let parts: BTreeSet<&str> = m.split('+').collect();
            for name in ["text", "video", "audio"] {
                cells.push(mark(&parts.contains(name).to_string()).to_string());
            }
        } else {
            cells.extend(row_axes.iter().map(|a| r.axes.get(a).cloned().unwrap_or_default()));
        }
        let k = report.block_key(r);
        for (i, v) in [r.precision_s, r.recall_s, r.f_s].into_iter().enumerate() {
            let shown = pct(v);
            let is_best = v.is_some() && report.rows.len() > 1 && best.get(&(k.clone(), i)) == Some(&shown);
            cells.push(if is_best { format!("**{shown}**") } else { shown });
        }
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    out
}

fn render_csv(report: &Report) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec!["layout".into(), "cell_id".into()];
    header.extend(Axis::ALL.iter().map(|a| a.name().to_string()));
    header.extend(
        [
            "precision_s",
            "recall_s",
            "f_s",
            "n_samples",
            "n_repeats",
            "invalid_predictions",
            "missing_units",
        ]
        .map(String::from),
    );
    w.write_record(&header).expect("in-memory csv");
    let num = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in &report.rows {
        let mut rec = vec![r.layout.to_string(), r.cell_id.clone()];
        rec.extend(Axis::ALL.iter().map(|a| r.axes.get(a).cloned().unwrap_or_default()));
        rec.extend([
            num(r.precision_s),
            num(r.recall_s),
            num(r.f_s),
            r.n_samples.to_string(),
            r.n_repeats.to_string(),
            r.invalid_predictions.to_string(),
            r.missing_units.to_string(),
        ]);
        w.write_record(&rec).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

/// Parses a json-lines report back into rows.
pub fn parse_report_jsonl(text: &str) -> Result<Report, ReportError> {
    let mut rows: Vec<ReportRow> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: ReportRow = serde_json::from_str(line).map_err(|e| ReportError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(first) = rows.first() {
            if first.layout != row.layout {
                return Err(ReportError::Parse {
                    line: i + 1,
                    message: format!("layout `{}` after `{}`", row.layout, first.layout),
                });
            }
        }
        rows.push(row);
    }
    let layout = rows.first().map_or(ReportLayout::Raw, |r| r.layout);
    let axes: Vec<_> = rows.iter().map(|r| r.axes.clone()).collect();
    Ok(Report {
        layout,
        swept: swept_axes(&axes),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaStatus {
    Both,
    OnlyInA,
    OnlyInB,
}

/// Difference `b - a` for one cell, in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    pub key: BTreeMap<Axis, String>,
    pub status: DeltaStatus,
    pub precision_pp: Option<f64>,
    pub recall_pp: Option<f64>,
    pub f_pp: Option<f64>,
}

/// Cell-wise deltas between two reports of the same layout over the same
/// swept axes. Cells are matched by their swept-axis values.
pub fn diff_reports(a: &Report, b: &Report) -> Result<Vec<CellDelta>, ReportError> {
    if a.layout != b.layout {
        return Err(ReportError::Incomparable(format!("layouts differ: `{}` vs `{}`", a.layout, b.layout)));
    }
    if a.swept != b.swept {
        let names = |v: &[Axis]| v.iter().map(|x| x.name()).collect::<Vec<_>>().join(",");
        return Err(ReportError::Incomparable(format!(
            "swept axes differ: [{}] vs [{}]",
            names(&a.swept),
            names(&b.swept)
        )));
    }
    let key = |r: &ReportRow| -> BTreeMap<Axis, String> {
        a.swept.iter().map(|x| (*x, r.axes.get(x).cloned().unwrap_or_default())).collect()
    };
    let delta = |x: Option<f64>, y: Option<f64>| Some((y? - x?) * 100.0);
    let b_rows: BTreeMap<_, _> = b.rows.iter().map(|r| (key(r), r)).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for ra in &a.rows {
        let k = key(ra);
        match b_rows.get(&k) {
            Some(rb) => {
                seen.insert(k.clone());
                out.push(CellDelta {
                    key: k,
                    status: DeltaStatus::Both,
                    precision_pp: delta(ra.precision_s, rb.precision_s),
                    recall_pp: delta(ra.recall_s, rb.recall_s),
                    f_pp: delta(ra.f_s, rb.f_s),
                });
            }
            None => out.push(CellDelta {
                key: k,
                status: DeltaStatus::OnlyInA,
                precision_pp: None,
                recall_pp: None,
                f_pp: None,
            }),
        }
    }
    for rb in &b.rows {
        let k = key(rb);
        if !seen.contains(&k) {
            out.push(CellDelta {
                key: k,
                status: DeltaStatus::OnlyInB,
                precision_pp: None,
                recall_pp: None,
                f_pp: None,
            });
        }
    }
    Ok(out)
}

pub fn load_results(run_dir: &Path) -> Result<Vec<CellResult>, ReportError> {
    let path = run_dir.join(METRICS_FILE);
    if !path.exists() {
        return Err(ReportError::NotEvaluated(run_dir.to_path_buf()));
    }
    Ok(read_jsonl(&path)?)
}

/// Builds a layout from `run_dir/metrics.jsonl` and writes it to
/// `run_dir/reports/<layout>.<ext>`. Returns the written path and text.
pub fn write_report(run_dir: &Path, layout: ReportLayout, format: ReportFormat) -> Result<(PathBuf, String), ReportError> {
    let results = load_results(run_dir)?;
    let report = build_report(&results, layout)?;
    let text = render(&report, format);
    let dir = run_dir.join("reports");
    std::fs::create_dir_all(&dir).map_err(|source| ReportError::Io {
        path: dir.clone(),
        source,
    })?;
    let path = dir.join(format!("{layout}.{}", format.extension()));
    std::fs::write(&path, &text).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    Ok((path, text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendBinding, Capability, DecodeParams};
    use crate::eval::AggregateMetrics;
    use crate::pipeline::{Cell, ModalitySet, PipelineVariant};
    use crate::prompt::{CompositeStrategy, ContextLevel, HardPromptDesign};
    use crate::runner::axis_values;
    use crate::sampling::SamplingPolicy;

    fn b(id: &str, cap: Capability) -> BackendBinding {
        BackendBinding {
            backend_id: id.into(),
            model_id: id.into(),
            capability: cap,
            endpoint: "mock:x".into(),
            auth_ref: None,
            decode: DecodeParams::default(),
        }
    }

    fn result(m: ModalitySet, design: HardPromptDesign, llm: &str, f: f64) -> CellResult {
        let cell = Cell {
            variant: PipelineVariant::ClueTwoStage,
            modalities: m,
            llm: Some(b(llm, Capability::Text)),
            video: m.video.then(|| b("v", Capability::TextFrames)),
            audio: m.audio.then(|| b("a", Capability::TextAudio)),
            design,
            strategy: CompositeStrategy::None,
            context: ContextLevel::SubtitleOnly,
            sampling: m.video.then_some(SamplingPolicy::FIXED_24),
        };
        CellResult {
            cell_id: format!("{m}-{design:?}-{llm}"),
            axes: axis_values(&cell),
            cell,
            metrics: Some(AggregateMetrics {
                mean_precision_s: f,
                mean_recall_s: f,
                mean_f_s: f,
                n_samples: 3,
                n_repeats: 1,
                invalid_prediction_count: 0,
            }),
            missing_units: 0,
            grouping_fallbacks: 0,
        }
    }

    fn modality_run() -> Vec<CellResult> {
        ModalitySet::ALL
            .iter()
            .enumerate()
            .map(|(i, m)| result(*m, HardPromptDesign::Std, "llm", 0.4 + i as f64 / 100.0))
            .collect()
    }

    #[test]
    fn modality_table_has_marks_and_one_decimal() {
        let rep = build_report(&modality_run(), ReportLayout::Modality).unwrap();
        let md = render(&rep, ReportFormat::Markdown);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 2 + 7);
        assert_eq!(lines[0], "| Text | Video | Audio | Precision_s [%] | Recall_s [%] | F_s [%] |");
        assert_eq!(lines[2], "| ✓ | × | × | 40.0 | 40.0 | 40.0 |");
        assert_eq!(lines[4], "| × | × | ✓ | **42.0** | **42.0** | **42.0** |");
        assert_eq!(lines[7], "| × | ✓ | ✓ | **45.0** | **45.0** | **45.0** |");
        assert_eq!(lines[8], "| ✓ | ✓ | ✓ | **46.0** | **46.0** | **46.0** |");
    }

    #[test]
    fn csv_and_jsonl_keep_full_precision() {
        let mut run = modality_run();
        run[0].metrics.as_mut().unwrap().mean_f_s = 0.123456789;
        let rep = build_report(&run, ReportLayout::Modality).unwrap();
        assert!(render(&rep, ReportFormat::Csv).contains("0.123456789"));
        let jl = render(&rep, ReportFormat::JsonLines);
        assert!(jl.contains("0.123456789"));
        assert_eq!(parse_report_jsonl(&jl).unwrap(), rep);
    }

    #[test]
    fn prompts_layout_needs_a_prompt_axis() {
        let e = build_report(&modality_run(), ReportLayout::Prompts).unwrap_err();
        assert_eq!(e.code(), "LAYOUT_MISMATCH");
        let tri = ModalitySet::new(true, true, true);
        let run = vec![
            result(tri, HardPromptDesign::Std, "gpt", 0.5),
            result(tri, HardPromptDesign::Std, "qwen", 0.45),
            result(tri, HardPromptDesign::ZeroShotCot, "gpt", 0.55),
            result(tri, HardPromptDesign::ZeroShotCot, "qwen", 0.44),
        ];
        let rep = build_report(&run, ReportLayout::Prompts).unwrap();
        assert_eq!(rep.group_axes(), vec![Axis::Design]);
        let md = render(&rep, ReportFormat::Markdown);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines[0], "| Hard Prompt | LLM | Precision_s [%] | Recall_s [%] | F_s [%] |");
        assert_eq!(lines[2], "| STD | gpt | **50.0** | **50.0** | **50.0** |");
        assert_eq!(lines[3], "| STD | qwen | 45.0 | 45.0 | 45.0 |");
        assert_eq!(lines[4], "| Zero-shot-CoT | gpt | **55.0** | **55.0** | **55.0** |");
    }

    #[test]
    fn raw_single_cell() {
        let run = vec![result(ModalitySet::new(true, false, false), HardPromptDesign::Std, "llm", 0.3)];
        let rep = build_report(&run, ReportLayout::Raw).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.rows[0].axes.len(), Axis::ALL.len());
    }

    #[test]
    fn diffs() {
        let a = build_report(&modality_run(), ReportLayout::Modality).unwrap();
        let same = diff_reports(&a, &a).unwrap();
        assert!(same.iter().all(|d| d.f_pp == Some(0.0) && d.status == DeltaStatus::Both));

        let mut run_b = modality_run();
        run_b[3].metrics.as_mut().unwrap().mean_f_s += 0.005;
        let b = build_report(&run_b, ReportLayout::Modality).unwrap();
        let d = diff_reports(&a, &b).unwrap();
        let nonzero: Vec<_> = d.iter().filter(|x| x.f_pp != Some(0.0)).collect();
        assert_eq!(nonzero.len(), 1);
        assert!((nonzero[0].f_pp.unwrap() - 0.5).abs() < 1e-9);

        let raw = build_report(&modality_run(), ReportLayout::Raw).unwrap();
        assert!(diff_reports(&a, &raw).is_err());

        let mut short = modality_run();
        short.pop();
        let c = build_report(&short, ReportLayout::Modality).unwrap();
        let d = diff_reports(&a, &c).unwrap();
        assert_eq!(d.iter().filter(|x| x.status == DeltaStatus::OnlyInA).count(), 1);
    }
}
