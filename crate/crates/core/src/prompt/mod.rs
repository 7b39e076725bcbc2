//! Prompt rendering, output parsing and multi-call prompting strategies.

mod parse;
mod strategy;
mod templates;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::parse_emotion_list;
pub use strategy::{
    parse_subquestions, run_least_to_most, run_self_consistency, run_self_refine, run_single, run_strategy, LlmSession,
    StrategyOutcome, MAX_SUBQUESTIONS,
};
pub use templates::{render_template, TemplateStore};

use crate::backend::BackendError;
use crate::dataset::Sample;
use crate::eval::EvalError;

/// Appended verbatim by the zero-shot chain-of-thought design.
pub const COT_TRIGGER: &str = "Let's think step by step.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("MISSING_METADATA: sample `{sample_id}` lacks {what} required by context level {level}")]
    MissingMetadata {
        sample_id: String,
        level: ContextLevel,
        what: &'static str,
    },
    #[error("EMPTY_EVIDENCE: no clues and no subtitle to reason over")]
    EmptyEvidence,
    #[error("UNPARSEABLE: no emotion list found in model output")]
    Unparseable { output: String },
    #[error("template: {0}")]
    Template(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("grouping: {0}")]
    Grouping(#[from] EvalError),
}

impl PromptError {
    pub fn code(&self) -> &'static str {
        match self {
            PromptError::MissingMetadata { .. } => "MISSING_METADATA",
            PromptError::EmptyEvidence => "EMPTY_EVIDENCE",
            PromptError::Unparseable { .. } => "UNPARSEABLE",
            PromptError::Template(_) => "TEMPLATE",
            PromptError::InvalidStrategy(_) => "INVALID_STRATEGY",
            PromptError::Backend(e) => e.code(),
            PromptError::Grouping(_) => "GROUPING",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardPromptDesign {
    Std,
    ZeroShotCot,
    HandcraftedZeroShot,
    HandcraftedFewShot,
    Multipersona,
}

impl HardPromptDesign {
    pub const ALL: [HardPromptDesign; 5] = [
        HardPromptDesign::Std,
        HardPromptDesign::ZeroShotCot,
        HardPromptDesign::HandcraftedZeroShot,
        HardPromptDesign::HandcraftedFewShot,
        HardPromptDesign::Multipersona,
    ];

    pub fn template_id(&self) -> &'static str {
        match self {
            HardPromptDesign::Std | HardPromptDesign::ZeroShotCot => "stage2_std",
            HardPromptDesign::HandcraftedZeroShot => "stage2_handcrafted_zero_shot",
            HardPromptDesign::HandcraftedFewShot => "stage2_handcrafted_few_shot",
            HardPromptDesign::Multipersona => "stage2_multipersona",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            HardPromptDesign::Std => "STD",
            HardPromptDesign::ZeroShotCot => "Zero-shot-CoT",
            HardPromptDesign::HandcraftedZeroShot => "Handcrafted Zero-shot",
            HardPromptDesign::HandcraftedFewShot => "Handcrafted Few-shot",
            HardPromptDesign::Multipersona => "Multipersona",
        }
    }
}

impl fmt::Display for HardPromptDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// One extra call asks the model to pick the most consistent candidate.
    #[default]
    LlmSelect,
    /// Label groups supported by at least half of the candidates.
    GroupMajority,
}

fn default_k() -> u32 {
    5
}

fn default_iters() -> u32 {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompositeStrategy {
    None,
    SelfConsistency {
        #[serde(default = "default_k")]
        k: u32,
        #[serde(default)]
        selection: SelectionMode,
    },
    SelfRefine {
        #[serde(default = "default_iters")]
        iters: u32,
    },
    LeastToMost,
}

impl Default for CompositeStrategy {
    fn default() -> Self {
        CompositeStrategy::None
    }
}

impl CompositeStrategy {
    pub fn validate(&self) -> Result<(), PromptError> {
        match *self {
            CompositeStrategy::SelfConsistency { k, .. } if k < 2 => {
                Err(PromptError::InvalidStrategy(format!("self-consistency needs k >= 2, got {k}")))
            }
            CompositeStrategy::SelfRefine { iters } if iters < 1 => {
                Err(PromptError::InvalidStrategy("self-refine needs iters >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Backend calls the strategy makes when every output parses.
    /// Least-to-most depends on the decomposition; `subquestions` gives it.
    pub fn expected_calls(&self, subquestions: usize) -> usize {
        match *self {
            CompositeStrategy::None => 1,
            CompositeStrategy::SelfConsistency { k, selection } => {
                k as usize + usize::from(selection == SelectionMode::LlmSelect)
            }
            CompositeStrategy::SelfRefine { iters } => 1 + 2 * iters as usize,
            CompositeStrategy::LeastToMost => subquestions.min(MAX_SUBQUESTIONS) + 2,
        }
    }
}

impl fmt::Display for CompositeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompositeStrategy::None => f.write_str("none"),
            CompositeStrategy::SelfConsistency { k, selection } => match selection {
                SelectionMode::LlmSelect => write!(f, "usc-k{k}"),
                SelectionMode::GroupMajority => write!(f, "sc-majority-k{k}"),
            },
            CompositeStrategy::SelfRefine { iters } => write!(f, "self-refine-{iters}"),
            CompositeStrategy::LeastToMost => f.write_str("least-to-most"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage1Mode {
    EmotionalClue,
    ObjectiveDescription,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextLevel {
    SubtitleOnly,
    PlusSourceAndNames,
    PlusTraitsAndExperiences,
}

impl fmt::Display for ContextLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextLevel::SubtitleOnly => "subtitle",
            ContextLevel::PlusSourceAndNames => "subtitle+source+names",
            ContextLevel::PlusTraitsAndExperiences => "subtitle+source+names+traits",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Video,
    Audio,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Video => "video",
            Modality::Audio => "audio",
        })
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "video" => Ok(Modality::Video),
            "audio" => Ok(Modality::Audio),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// Stage-1 output for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Clue {
    pub modality: Modality,
    pub mode: Stage1Mode,
    pub text: String,
}

/// Everything Stage 2 reasons over.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evidence {
    pub subtitle: Option<String>,
    pub clues: Vec<Clue>,
    /// Frames travel with the request itself (single-stage setup).
    pub attached_frames: bool,
}

impl Evidence {
    fn blocks(&self) -> Vec<String> {
        let mut blocks = Vec::new();
        if let Some(sub) = self.subtitle.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
            blocks.push(format!("[Subtitle]\n{sub}"));
        }
        if self.attached_frames {
            blocks.push("[Video]\nSee the attached frames.".to_string());
        }
        for m in [Modality::Video, Modality::Audio] {
            for c in self.clues.iter().filter(|c| c.modality == m) {
                let text = c.text.trim();
                if text.is_empty() {
                    continue;
                }
                let header = match (c.modality, c.mode) {
                    (Modality::Video, Stage1Mode::EmotionalClue) => "Video clues",
                    (Modality::Audio, Stage1Mode::EmotionalClue) => "Audio clues",
                    (Modality::Video, Stage1Mode::ObjectiveDescription) => "Video description",
                    (Modality::Audio, Stage1Mode::ObjectiveDescription) => "Audio description",
                };
                blocks.push(format!("[{header}]\n{text}"));
            }
        }
        blocks
    }

    /// Scene description: one block per available piece of evidence.
    pub fn scene_text(&self) -> Result<String, PromptError> {
        let blocks = self.blocks();
        if blocks.is_empty() {
            return Err(PromptError::EmptyEvidence);
        }
        Ok(blocks.join("\n"))
    }
}

/// Title and character block for the requested context level. Empty for
/// subtitle-only; otherwise ends with a newline.
pub fn context_block(sample: &Sample, level: ContextLevel) -> Result<String, PromptError> {
    let missing = |what| PromptError::MissingMetadata {
        sample_id: sample.id.clone(),
        level,
        what,
    };
    match level {
        ContextLevel::SubtitleOnly => return Ok(String::new()),
        ContextLevel::PlusSourceAndNames => {
            if sample.title.is_none() && sample.characters.is_empty() {
                return Err(missing("a title or character profiles"));
            }
        }
        ContextLevel::PlusTraitsAndExperiences => {
            if sample.characters.is_empty() {
                return Err(missing("character profiles"));
            }
            if !sample.characters.iter().any(|c| c.traits_and_experiences.is_some()) {
                return Err(missing("character traits and experiences"));
            }
        }
    }
    let mut out = String::new();
    if let Some(title) = &sample.title {
        out.push_str(&format!("[Video source]\n{title}\n"));
    }
    if !sample.characters.is_empty() {
        out.push_str("[Characters]\n");
        for c in &sample.characters {
            out.push_str(&format!("- {}", c.name));
            if !c.basic_info.trim().is_empty() {
                out.push_str(&format!(": {}", c.basic_info.trim()));
            }
            out.push('\n');
            if level == ContextLevel::PlusTraitsAndExperiences {
                if let Some(t) = c.traits_and_experiences.as_deref().filter(|t| !t.trim().is_empty()) {
                    out.push_str(&format!("  Traits and experiences: {}\n", t.trim()));
                }
            }
        }
    }
    Ok(out)
}

/// A rendered Stage-2 prompt plus the pieces strategies re-use.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Prompt {
    pub text: String,
    pub context: String,
    pub scene: String,
}

#[derive(Debug, Clone, Default)]
pub struct PromptEngine {
    templates: TemplateStore,
}

impl PromptEngine {
    pub fn new(templates: TemplateStore) -> Self {
        Self { templates }
    }

    pub fn templates(&self) -> &TemplateStore {
        &self.templates
    }

    pub fn render_stage1(
        &self,
        modality: Modality,
        mode: Stage1Mode,
        sample: &Sample,
        level: ContextLevel,
    ) -> Result<String, PromptError> {
        let id = match (modality, mode) {
            (Modality::Video, Stage1Mode::EmotionalClue) => "stage1_video_clue",
            (Modality::Audio, Stage1Mode::EmotionalClue) => "stage1_audio_clue",
            (Modality::Video, Stage1Mode::ObjectiveDescription) => "stage1_video_objective",
            (Modality::Audio, Stage1Mode::ObjectiveDescription) => "stage1_audio_objective",
        };
        let ctx = context_block(sample, level)?;
        Ok(self.templates.render(id, &[("context", &ctx)])?.trim_end().to_string())
    }

    pub fn render_stage2(
        &self,
        design: HardPromptDesign,
        evidence: &Evidence,
        context: &str,
    ) -> Result<Stage2Prompt, PromptError> {
        let scene = evidence.scene_text()?;
        let exemplars = self.templates.get("fewshot_exemplars")?;
        let body = self.templates.render(
            design.template_id(),
            &[("context", context), ("scene", &scene), ("exemplars", exemplars)],
        )?;
        let mut text = body.trim_end().to_string();
        if design == HardPromptDesign::ZeroShotCot {
            text.push('\n');
            text.push_str(COT_TRIGGER);
        }
        Ok(Stage2Prompt {
            text,
            context: context.to_string(),
            scene,
        })
    }

    /// Single-call prompt for a frames-capable model: the design's Stage-2
    /// prompt over the (optional) subtitle, framed for attached images.
    pub fn render_one_stage(
        &self,
        design: HardPromptDesign,
        subtitle: Option<&str>,
        context: &str,
    ) -> Result<String, PromptError> {
        let evidence = Evidence {
            subtitle: subtitle.map(str::to_string),
            clues: Vec::new(),
            attached_frames: true,
        };
        let inner = self.render_stage2(design, &evidence, context)?;
        Ok(self
            .templates
            .render("one_stage", &[("prompt", &inner.text)])?
            .trim_end()
            .to_string())
    }
}
