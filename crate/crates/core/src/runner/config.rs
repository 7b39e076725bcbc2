use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::backend::BackendBinding;
use crate::eval::Averaging;
use crate::pipeline::{ModalitySet, PipelineVariant};
use crate::prompt::{CompositeStrategy, ContextLevel, HardPromptDesign};
use crate::sampling::{ExtractorConfig, SamplingPolicy};

fn default_repeats() -> u32 {
    5
}

fn default_variants() -> Vec<PipelineVariant> {
    vec![PipelineVariant::ClueTwoStage]
}

fn default_modalities() -> Vec<ModalitySet> {
    vec![ModalitySet::new(true, true, true)]
}

fn default_designs() -> Vec<HardPromptDesign> {
    vec![HardPromptDesign::Std]
}

fn default_strategies() -> Vec<CompositeStrategy> {
    vec![CompositeStrategy::None]
}

fn default_contexts() -> Vec<ContextLevel> {
    vec![ContextLevel::SubtitleOnly]
}

fn default_sampling() -> Vec<SamplingPolicy> {
    vec![SamplingPolicy::FIXED_24]
}

fn default_workers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Concurrency {
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Requests per second, keyed by backend id.
    #[serde(default)]
    pub rate_limits: BTreeMap<String, u32>,
}

impl Default for Concurrency {
    fn default() -> Self {
        Self {
            workers: default_workers(),
            rate_limits: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupingConfig {
    /// Synonym table; the bundled one when `path` is absent.
    Lexicon {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
    },
    /// Ask a text model to cluster labels.
    Llm { binding: BackendBinding },
}

impl Default for GroupingConfig {
    fn default() -> Self {
        GroupingConfig::Lexicon { path: None }
    }
}

/// A sweep description. Every list is one axis of the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub run_dir: PathBuf,
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    #[serde(default = "default_variants")]
    pub variants: Vec<PipelineVariant>,
    #[serde(default = "default_modalities")]
    pub modality_sets: Vec<ModalitySet>,
    #[serde(default)]
    pub llm: Vec<BackendBinding>,
    #[serde(default)]
    pub video: Vec<BackendBinding>,
    #[serde(default)]
    pub audio: Vec<BackendBinding>,
    #[serde(default = "default_designs")]
    pub designs: Vec<HardPromptDesign>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<CompositeStrategy>,
    #[serde(default = "default_contexts")]
    pub context_levels: Vec<ContextLevel>,
    #[serde(default = "default_sampling")]
    pub sampling: Vec<SamplingPolicy>,
    #[serde(default)]
    pub concurrency: Concurrency,
    /// Script id (as in `mock:<id>` endpoints) to script file.
    #[serde(default)]
    pub mock_scripts: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extractor: Option<ExtractorConfig>,
    #[serde(default)]
    pub grouping: GroupingConfig,
    #[serde(default)]
    pub averaging: Averaging,
    /// Re-issue Stage-1 calls on every repeat instead of reusing repeat 0's.
    #[serde(default)]
    pub rerun_stage1: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    /// Response cache location; `<run_dir>/cache` by default. Point several
    /// runs at one directory to share Stage-1 responses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RunnerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        Self::parse(&text, base)
    }

    /// Parses TOML and resolves relative paths against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, RunnerError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| RunnerError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.check()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.run_dir);
        self.mock_scripts.values_mut().for_each(fix);
        if let Some(t) = &mut self.templates_dir {
            fix(t);
        }
        if let Some(c) = &mut self.cache_dir {
            fix(c);
        }
        if let GroupingConfig::Lexicon { path: Some(p) } = &mut self.grouping {
            fix(p);
        }
    }

    /// Structural checks that do not need the file system.
    pub fn check(&self) -> Result<(), RunnerError> {
        let err = |m: String| Err(RunnerError::Config(m));
        if self.repeats == 0 {
            return err("repeats must be at least 1".into());
        }
        if self.concurrency.workers == 0 {
            return err("concurrency.workers must be at least 1".into());
        }
        if let Some((id, _)) = self.concurrency.rate_limits.iter().find(|(_, v)| **v == 0) {
            return err(format!("rate limit for `{id}` must be positive"));
        }
        for (name, empty) in [
            ("variants", self.variants.is_empty()),
            ("modality_sets", self.modality_sets.is_empty()),
            ("designs", self.designs.is_empty()),
            ("strategies", self.strategies.is_empty()),
            ("context_levels", self.context_levels.is_empty()),
            ("sampling", self.sampling.is_empty()),
        ] {
            if empty {
                return err(format!("`{name}` must not be empty"));
            }
        }
        for s in &self.strategies {
            s.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        }
        for p in &self.sampling {
            p.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        }
        for (role, list) in [("llm", &self.llm), ("video", &self.video), ("audio", &self.audio)] {
            let mut ids = std::collections::BTreeSet::new();
            for b in list {
                if b.backend_id.trim().is_empty() {
                    return err(format!("{role} binding with empty backend_id"));
                }
                if !ids.insert((b.backend_id.as_str(), b.model_id.as_str(), b.endpoint.as_str())) {
                    return err(format!("{role} binding `{}`/`{}` listed twice", b.backend_id, b.model_id));
                }
            }
        }
        Ok(())
    }

    pub fn cache_root(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.run_dir.join("cache"))
    }

    /// Every binding the configuration may call.
    pub fn all_bindings(&self) -> impl Iterator<Item = &BackendBinding> {
        let grouping = match &self.grouping {
            GroupingConfig::Llm { binding } => Some(binding),
            GroupingConfig::Lexicon { .. } => None,
        };
        self.llm.iter().chain(&self.video).chain(&self.audio).chain(grouping)
    }
}
