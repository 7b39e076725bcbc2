//! Experiment matrices: expansion, execution with resume, evaluation.

mod config;
mod state;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{Concurrency, ExperimentConfig, GroupingConfig};
pub use state::{
    load_predictions, read_jsonl, DeviationRecord, FailureRecord, RunState, UnitKey, COMPLETED, DEVIATIONS, FAILURES,
    PREDICTIONS,
};

use crate::backend::{load_mock_script, BackendClient, BackendClientBuilder, BackendError};
use crate::dataset::{load_manifest, validate_sample, DatasetError, Sample};
use crate::eval::{
    aggregate, set_metrics, AggregateMetrics, EvalError, Grouper, LexiconOracle, LlmGroupingOracle, SetMetrics,
};
use crate::pipeline::{run_unit, validate_cell, Cell, PipelineContext, Prediction, UnitRef};
use crate::prompt::{PromptEngine, PromptError, TemplateStore};
use crate::sampling::ExtractorConfig;

pub const CONFIG_FILE: &str = "config.json";
pub const SPECS_FILE: &str = "specs.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("CONFIG_ERROR: {0}")]
    Config(String),
    #[error("EMPTY_MATRIX: no configuration survives pruning ({pruned} cells pruned)")]
    EmptyMatrix { pruned: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl RunnerError {
    pub fn code(&self) -> &'static str {
        match self {
            RunnerError::Config(_) => "CONFIG_ERROR",
            RunnerError::EmptyMatrix { .. } => "EMPTY_MATRIX",
            RunnerError::Io { .. } => "IO_ERROR",
            RunnerError::Dataset(_) => "DATASET_ERROR",
            RunnerError::Backend(e) => e.code(),
            RunnerError::Eval(_) => "EVAL_ERROR",
            RunnerError::Prompt(e) => e.code(),
        }
    }
}

/// Matrix axes, in expansion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Variant,
    Modalities,
    Llm,
    Video,
    Audio,
    Design,
    Strategy,
    Context,
    Sampling,
}

impl Axis {
    pub const ALL: [Axis; 9] = [
        Axis::Variant,
        Axis::Modalities,
        Axis::Llm,
        Axis::Video,
        Axis::Audio,
        Axis::Design,
        Axis::Strategy,
        Axis::Context,
        Axis::Sampling,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Axis::Variant => "variant",
            Axis::Modalities => "modalities",
            Axis::Llm => "llm",
            Axis::Video => "video_llm",
            Axis::Audio => "audio_llm",
            Axis::Design => "design",
            Axis::Strategy => "strategy",
            Axis::Context => "context",
            Axis::Sampling => "sampling",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Placeholder for an axis a cell does not use.
pub const UNUSED: &str = "-";

/// Display value of one axis for a cell.
pub fn axis_value(cell: &Cell, axis: Axis) -> String {
    let model = |b: &Option<crate::backend::BackendBinding>| b.as_ref().map_or(UNUSED.to_string(), |b| b.model_id.clone());
    match axis {
        Axis::Variant => cell.variant.to_string(),
        Axis::Modalities => cell.modalities.to_string(),
        Axis::Llm => model(&cell.llm),
        Axis::Video => model(&cell.video),
        Axis::Audio => model(&cell.audio),
        Axis::Design => cell.design.label().to_string(),
        Axis::Strategy => cell.strategy.to_string(),
        Axis::Context => cell.context.to_string(),
        Axis::Sampling => cell.sampling.map_or(UNUSED.to_string(), |s| s.to_string()),
    }
}

pub fn axis_values(cell: &Cell) -> BTreeMap<Axis, String> {
    Axis::ALL.iter().map(|a| (*a, axis_value(cell, *a))).collect()
}

/// One cell of the matrix at one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Digest over the canonical cell and the repeat index.
    pub id: String,
    /// Digest over the canonical cell alone; shared by its repeats.
    pub cell_id: String,
    pub repeat: u32,
    pub cell: Cell,
}

fn digest_json(v: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(v).expect("spec serializes");
    hex::encode(Sha256::digest(bytes))
}

impl ExperimentSpec {
    pub fn new(cell: Cell, repeat: u32) -> Self {
        let cell_id = digest_json(&cell);
        let id = digest_json(&(&cell, repeat));
        Self {
            id,
            cell_id,
            repeat,
            cell,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedCell {
    pub axes: BTreeMap<Axis, String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub specs: Vec<ExperimentSpec>,
    pub pruned: Vec<PrunedCell>,
    /// Cartesian cells that became duplicates once unused axes were cleared.
    pub collapsed: usize,
}

impl Matrix {
    pub fn cells(&self) -> usize {
        self.specs.iter().map(|s| &s.cell_id).collect::<HashSet<_>>().len()
    }
}

fn options<T: Clone>(v: &[T]) -> Vec<Option<T>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().cloned().map(Some).collect()
    }
}

/// Cartesian product of all axes, canonicalized, deduplicated and pruned,
/// then crossed with repeats. Order follows the axis order of the config,
/// then the repeat index.
pub fn expand_matrix(cfg: &ExperimentConfig) -> Result<Matrix, RunnerError> {
    let mut seen = HashSet::new();
    let mut cells = Vec::new();
    let mut pruned = Vec::new();
    let mut collapsed = 0;
    let llms = options(&cfg.llm);
    let videos = options(&cfg.video);
    let audios = options(&cfg.audio);
    for &variant in &cfg.variants {
        for &modalities in &cfg.modality_sets {
            for llm in &llms {
                for video in &videos {
                    for audio in &audios {
                        for &design in &cfg.designs {
                            for &strategy in &cfg.strategies {
                                for &context in &cfg.context_levels {
                                    for &sampling in &cfg.sampling {
                                        let cell = Cell {
                                            variant,
                                            modalities,
                                            llm: llm.clone(),
                                            video: video.clone(),
                                            audio: audio.clone(),
                                            design,
                                            strategy,
                                            context,
                                            sampling: Some(sampling),
                                        }
                                        .canonical();
                                        let key = serde_json::to_string(&cell).expect("cell serializes");
                                        if !seen.insert(key) {
                                            collapsed += 1;
                                            continue;
                                        }
                                        match validate_cell(&cell) {
                                            Ok(()) => cells.push(cell),
                                            Err(e) => pruned.push(PrunedCell {
                                                axes: axis_values(&cell),
                                                reason: e.to_string(),
                                            }),
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(RunnerError::EmptyMatrix { pruned: pruned.len() });
    }
    for p in &pruned {
        log::info!("pruned cell {:?}: {}", p.axes, p.reason);
    }
    let specs = cells
        .into_iter()
        .flat_map(|c| (0..cfg.repeats).map(move |r| ExperimentSpec::new(c.clone(), r)))
        .collect();
    Ok(Matrix {
        specs,
        pruned,
        collapsed,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecuteOptions {
    /// Stop dispatching after this many units (for staged runs and tests).
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub total_units: usize,
    pub already_complete: usize,
    pub completed: usize,
    pub failed: usize,
    pub invalid: usize,
    /// Backend calls that were not answered from the cache.
    pub backend_calls: usize,
    pub stopped_early: bool,
}

/// Per-cell evaluation result, the input of every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell_id: String,
    pub axes: BTreeMap<Axis, String>,
    pub cell: Cell,
    /// `None` when the cell has no valid prediction at all.
    pub metrics: Option<AggregateMetrics>,
    pub missing_units: usize,
    pub grouping_fallbacks: usize,
}

/// A prepared run: configuration, data, matrix and backend machinery.
pub struct Runner {
    pub config: ExperimentConfig,
    pub samples: Vec<Sample>,
    pub matrix: Matrix,
    client: Arc<BackendClient>,
    engine: PromptEngine,
    grouper: Grouper,
    extractor: ExtractorConfig,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Runner {
    pub fn prepare(config: ExperimentConfig) -> Result<Self, RunnerError> {
        Self::prepare_with(config, BackendClient::builder())
    }

    /// Re-opens a run directory with the configuration frozen in it.
    pub fn resume(run_dir: impl AsRef<Path>) -> Result<Self, RunnerError> {
        Self::resume_with(run_dir, BackendClient::builder())
    }

    pub fn resume_with(run_dir: impl AsRef<Path>, builder: BackendClientBuilder) -> Result<Self, RunnerError> {
        let path = run_dir.as_ref().join(CONFIG_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
        Self::prepare_with(config, builder)
    }

    /// Like [`Runner::prepare`], starting from a caller-supplied client
    /// builder (for a custom clock or credentials lookup). Mock scripts,
    /// cache, transcript and rate limits come from the configuration.
    pub fn prepare_with(config: ExperimentConfig, builder: BackendClientBuilder) -> Result<Self, RunnerError> {
        config.check()?;
        let samples = load_manifest(&config.manifest)?;
        let matrix = expand_matrix(&config)?;

        let mut builder = builder;
        for (id, path) in &config.mock_scripts {
            let mock = load_mock_script(path).map_err(|e| RunnerError::Config(format!("mock script `{id}`: {e}")))?;
            builder = builder.mock(id.clone(), mock);
        }
        for b in config.all_bindings() {
            if let Some(id) = b.mock_script_id() {
                if !config.mock_scripts.contains_key(id) {
                    return Err(RunnerError::Config(format!(
                        "binding `{}` uses mock script `{id}`, which is not listed in mock_scripts",
                        b.backend_id
                    )));
                }
            }
        }
        for (id, per_second) in &config.concurrency.rate_limits {
            builder = builder.rate_limit(id.clone(), *per_second);
        }
        std::fs::create_dir_all(&config.run_dir).map_err(io_err(&config.run_dir))?;
        let client = Arc::new(
            builder
                .cache_dir(config.cache_root())
                .transcript_file(config.run_dir.join(TRANSCRIPT_FILE))
                .build()?,
        );

        let templates = match &config.templates_dir {
            Some(dir) => TemplateStore::load_dir(dir)?,
            None => TemplateStore::builtin(),
        };
        let grouping_cache = Some(config.run_dir.join("grouping-cache"));
        let grouper = match &config.grouping {
            GroupingConfig::Lexicon { path } => {
                let lex = match path {
                    Some(p) => LexiconOracle::load(p)?,
                    None => LexiconOracle::builtin(),
                };
                Grouper::new(Box::new(lex), grouping_cache)?
            }
            GroupingConfig::Llm { binding } => {
                Grouper::new(Box::new(LlmGroupingOracle::new(client.clone(), binding.clone())), grouping_cache)?
            }
        };
        let runner = Self {
            extractor: config.extractor.clone().unwrap_or_default(),
            config,
            samples,
            matrix,
            client,
            engine: PromptEngine::new(templates),
            grouper,
        };
        runner.freeze()?;
        Ok(runner)
    }

    /// Writes the resolved configuration and spec list into the run
    /// directory, or checks that an existing one matches.
    fn freeze(&self) -> Result<(), RunnerError> {
        let dir = &self.config.run_dir;
        let path = dir.join(CONFIG_FILE);
        let mine = serde_json::to_value(&self.config).expect("config serializes");
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            let theirs: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
            if theirs != mine {
                return Err(RunnerError::Config(format!(
                    "{} holds a different configuration; use a fresh run_dir",
                    dir.display()
                )));
            }
            return Ok(());
        }
        let specs: String = self
            .matrix
            .specs
            .iter()
            .map(|s| serde_json::to_string(s).expect("spec serializes") + "\n")
            .collect();
        let specs_path = dir.join(SPECS_FILE);
        std::fs::write(&specs_path, specs).map_err(io_err(&specs_path))?;
        let state = RunState::open(dir)?;
        for p in &self.matrix.pruned {
            state.record_deviation(&DeviationRecord {
                spec: None,
                sample_id: None,
                message: format!("pruned {}: {}", describe_axes(&p.axes), p.reason),
            })?;
        }
        let body = serde_json::to_string_pretty(&mine).expect("config serializes");
        std::fs::write(&path, body).map_err(io_err(&path))
    }

    pub fn client(&self) -> &BackendClient {
        &self.client
    }

    pub fn grouper(&self) -> &Grouper {
        &self.grouper
    }

    pub fn run_dir(&self) -> &Path {
        &self.config.run_dir
    }

    /// Runs every unit not yet complete. Unit failures are logged and do not
    /// stop the run; storage errors do.
    pub fn execute(&self, opts: &ExecuteOptions) -> Result<RunSummary, RunnerError> {
        let state = RunState::open(&self.config.run_dir)?;
        let mut units = Vec::new();
        let mut already = 0;
        for spec in &self.matrix.specs {
            for sample in &self.samples {
                let key = UnitKey {
                    spec: spec.id.clone(),
                    sample_id: sample.id.clone(),
                };
                if state.is_complete(&key) {
                    already += 1;
                } else {
                    units.push((spec, sample));
                }
            }
        }
        let limit = opts.stop_after.map_or(units.len(), |n| n.min(units.len()));
        let ctx = PipelineContext {
            client: &self.client,
            engine: &self.engine,
            extractor: &self.extractor,
            grouper: Some(&self.grouper),
            rerun_stage1: self.config.rerun_stage1,
        };
        let calls_before = self.client.transcript().len();
        let next = AtomicUsize::new(0);
        let completed = AtomicUsize::new(0);
        let failed = AtomicUsize::new(0);
        let invalid = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let fatal: Mutex<Option<RunnerError>> = Mutex::new(None);
        let workers = self.config.concurrency.workers.min(limit.max(1));

        let work = |spec: &ExperimentSpec, sample: &Sample| -> Result<(), RunnerError> {
            let unit = UnitRef {
                spec: &spec.id,
                repeat: spec.repeat,
            };
            match run_unit(&ctx, &spec.cell, sample, unit) {
                Ok(p) => {
                    state.record_prediction(&p)?;
                    for d in &p.deviations {
                        state.record_deviation(&DeviationRecord {
                            spec: Some(spec.id.clone()),
                            sample_id: Some(sample.id.clone()),
                            message: d.clone(),
                        })?;
                    }
                    completed.fetch_add(1, Ordering::SeqCst);
                    if !p.valid {
                        invalid.fetch_add(1, Ordering::SeqCst);
                    }
                }
                Err(e) => {
                    log::warn!("unit {}/{} failed: {e}", &spec.id[..8], sample.id);
                    state.record_failure(&FailureRecord {
                        spec: spec.id.clone(),
                        sample_id: sample.id.clone(),
                        repeat: spec.repeat,
                        code: e.code().to_string(),
                        message: e.to_string(),
                    })?;
                    failed.fetch_add(1, Ordering::SeqCst);
                }
            }
            Ok(())
        };

        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= limit {
                        break;
                    }
                    let (spec, sample) = units[i];
                    if let Err(e) = work(spec, sample) {
                        abort.store(true, Ordering::SeqCst);
                        fatal.lock().expect("fatal slot poisoned").get_or_insert(e);
                        break;
                    }
                });
            }
        });
        if let Some(e) = fatal.into_inner().expect("fatal slot poisoned") {
            return Err(e);
        }
        Ok(RunSummary {
            total_units: self.matrix.specs.len() * self.samples.len(),
            already_complete: already,
            completed: completed.into_inner(),
            failed: failed.into_inner(),
            invalid: invalid.into_inner(),
            backend_calls: self.client.transcript().len() - calls_before,
            stopped_early: limit < units.len(),
        })
    }

    /// Scores every completed prediction and writes `metrics.jsonl`.
    pub fn evaluate(&self) -> Result<Vec<CellResult>, RunnerError> {
        let predictions = load_predictions(&self.config.run_dir)?;
        let results = evaluate_predictions(
            &self.matrix.specs,
            &self.samples,
            &predictions,
            &self.grouper,
            self.config.averaging,
            self.config.concurrency.workers,
        )?;
        let path = self.config.run_dir.join(METRICS_FILE);
        let body: String = results
            .iter()
            .map(|r| serde_json::to_string(r).expect("result serializes") + "\n")
            .collect();
        std::fs::write(&path, body).map_err(io_err(&path))?;
        Ok(results)
    }
}

fn describe_axes(axes: &BTreeMap<Axis, String>) -> String {
    axes.iter()
        .filter(|(_, v)| v.as_str() != UNUSED)
        .map(|(a, v)| format!("{a}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

type Job<'a> = (usize, u32, &'a Sample, &'a Prediction);

/// Groups and scores predictions, then averages per cell: over samples
/// within each repeat, then over repeats.
pub fn evaluate_predictions(
    specs: &[ExperimentSpec],
    samples: &[Sample],
    predictions: &BTreeMap<UnitKey, Prediction>,
    grouper: &Grouper,
    averaging: crate::eval::Averaging,
    workers: usize,
) -> Result<Vec<CellResult>, RunnerError> {
    let mut cell_order: Vec<&ExperimentSpec> = Vec::new();
    let mut cell_index: HashMap<&str, usize> = HashMap::new();
    for s in specs {
        cell_index.entry(&s.cell_id).or_insert_with(|| {
            cell_order.push(s);
            cell_order.len() - 1
        });
    }
    let mut missing = vec![0usize; cell_order.len()];
    let mut jobs: Vec<Job<'_>> = Vec::new();
    for s in specs {
        let ci = cell_index[s.cell_id.as_str()];
        for sample in samples {
            let key = UnitKey {
                spec: s.id.clone(),
                sample_id: sample.id.clone(),
            };
            match predictions.get(&key) {
                Some(p) => jobs.push((ci, s.repeat, sample, p)),
                None => missing[ci] += 1,
            }
        }
    }

    let scored: Vec<Mutex<Option<Result<(Option<SetMetrics>, bool), EvalError>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(_, _, sample, p)) = jobs.get(i) else { break };
                let r = score_one(sample, p, grouper);
                *scored[i].lock().expect("score slot poisoned") = Some(r);
            });
        }
    });

    // cell -> repeat -> per-sample metrics
    let mut per_cell: Vec<BTreeMap<u32, Vec<Option<SetMetrics>>>> = vec![BTreeMap::new(); cell_order.len()];
    let mut fallbacks = vec![0usize; cell_order.len()];
    for (job, slot) in jobs.iter().zip(scored) {
        let (m, fell_back) = slot.into_inner().expect("score slot poisoned").expect("every job scored")?;
        per_cell[job.0].entry(job.1).or_default().push(m);
        fallbacks[job.0] += usize::from(fell_back);
    }

    let mut out = Vec::with_capacity(cell_order.len());
    for (ci, spec) in cell_order.iter().enumerate() {
        let reps: Vec<Vec<Option<SetMetrics>>> = std::mem::take(&mut per_cell[ci]).into_values().collect();
        let metrics = match aggregate(&reps, averaging) {
            Ok(m) => Some(m),
            Err(EvalError::EmptyEvaluation) => None,
            Err(e) => return Err(e.into()),
        };
        out.push(CellResult {
            cell_id: spec.cell_id.clone(),
            axes: axis_values(&spec.cell),
            cell: spec.cell.clone(),
            metrics,
            missing_units: missing[ci],
            grouping_fallbacks: fallbacks[ci],
        });
    }
    Ok(out)
}

fn score_one(sample: &Sample, p: &Prediction, grouper: &Grouper) -> Result<(Option<SetMetrics>, bool), EvalError> {
    if !p.valid {
        return Ok((None, false));
    }
    let union: Vec<&str> = sample.labels.iter().chain(p.labels.iter()).collect();
    let grouped = grouper.group_labels(&union)?;
    let m = set_metrics(&sample.labels, &p.labels, &grouped.assignment)?;
    Ok((Some(m), grouped.deviation.is_some()))
}

/// Outcome of checking a configuration without running it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigCheck {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    pub specs: usize,
    pub cells: usize,
    pub samples: usize,
}

/// Loads everything a run would need and reports problems. Configuration
/// problems are errors; data problems and pruned cells are warnings.
pub fn check_config(path: impl AsRef<Path>) -> ConfigCheck {
    let mut out = ConfigCheck::default();
    let cfg = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            out.errors.push(e.to_string());
            return out;
        }
    };
    match load_manifest(&cfg.manifest) {
        Ok(samples) => {
            out.samples = samples.len();
            for s in &samples {
                for issue in validate_sample(s) {
                    out.warnings.push(format!("sample `{}`: {} {}", s.id, issue.code, issue.detail));
                }
            }
        }
        Err(e) => out.errors.push(format!("manifest: {e}")),
    }
    for (id, path) in &cfg.mock_scripts {
        if let Err(e) = load_mock_script(path) {
            out.errors.push(format!("mock script `{id}` ({}): {e}", path.display()));
        }
    }
    for b in cfg.all_bindings() {
        match b.mock_script_id() {
            Some(id) if !cfg.mock_scripts.contains_key(id) => out
                .errors
                .push(format!("binding `{}` uses unlisted mock script `{id}`", b.backend_id)),
            None => {
                if let Some(var) = &b.auth_ref {
                    let msg = format!("binding `{}`: credential variable {var} is not set", b.backend_id);
                    if std::env::var_os(var).is_none() && !out.warnings.contains(&msg) {
                        out.warnings.push(msg);
                    }
                }
            }
            _ => {}
        }
    }
    if let Some(dir) = &cfg.templates_dir {
        if let Err(e) = TemplateStore::load_dir(dir) {
            out.errors.push(format!("templates: {e}"));
        }
    }
    if let GroupingConfig::Lexicon { path: Some(p) } = &cfg.grouping {
        if let Err(e) = LexiconOracle::load(p) {
            out.errors.push(format!("lexicon: {e}"));
        }
    }
    match expand_matrix(&cfg) {
        Ok(m) => {
            out.specs = m.specs.len();
            out.cells = m.cells();
            for p in &m.pruned {
                out.warnings.push(format!("pruned {}: {}", describe_axes(&p.axes), p.reason));
            }
        }
        Err(e) => out.errors.push(e.to_string()),
    }
    out
}
