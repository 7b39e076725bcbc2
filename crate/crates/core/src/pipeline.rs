//! Two-stage and one-stage recognition over a single sample.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendBinding, BackendClient, BackendError, Capability, MediaPayload, ModelRequest};
use crate::dataset::Sample;
use crate::eval::Grouper;
use crate::labels::EmotionLabelSet;
use crate::prompt::{
    context_block, parse_emotion_list, run_strategy, Clue, CompositeStrategy, ContextLevel, Evidence,
    HardPromptDesign, LlmSession, Modality, PromptEngine, PromptError, Stage1Mode,
};
use crate::sampling::{extract_frames, ExtractorConfig, SamplingError, SamplingPolicy};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("CONFIG_ERROR: {0}")]
    Config(String),
    #[error("{at}: {source}")]
    Backend {
        at: String,
        #[source]
        source: BackendError,
    },
    #[error("{at}: {source}")]
    Prompt {
        at: String,
        #[source]
        source: PromptError,
    },
    #[error("{at}: {source}")]
    Sampling {
        at: String,
        #[source]
        source: SamplingError,
    },
    #[error("{at}: {message}")]
    Media { at: String, message: String },
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "CONFIG_ERROR",
            PipelineError::Backend { source, .. } => source.code(),
            PipelineError::Prompt { source, .. } => source.code(),
            PipelineError::Sampling { .. } => "SAMPLING_ERROR",
            PipelineError::Media { .. } => "MEDIA_ERROR",
        }
    }

    fn prompt(at: impl Into<String>, e: PromptError) -> Self {
        match e {
            PromptError::Backend(source) => PipelineError::Backend { at: at.into(), source },
            source => PipelineError::Prompt { at: at.into(), source },
        }
    }
}

/// Which evidence reaches the final decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModalitySet {
    pub text: bool,
    pub video: bool,
    pub audio: bool,
}

impl ModalitySet {
    /// Unimodal, bimodal, then trimodal.
    pub const ALL: [ModalitySet; 7] = [
        ModalitySet::new(true, false, false),
        ModalitySet::new(false, true, false),
        ModalitySet::new(false, false, true),
        ModalitySet::new(true, true, false),
        ModalitySet::new(true, false, true),
        ModalitySet::new(false, true, true),
        ModalitySet::new(true, true, true),
    ];

    pub const fn new(text: bool, video: bool, audio: bool) -> Self {
        Self { text, video, audio }
    }

    pub fn is_empty(&self) -> bool {
        !(self.text || self.video || self.audio)
    }

    pub fn count(&self) -> usize {
        usize::from(self.text) + usize::from(self.video) + usize::from(self.audio)
    }

    /// True when every modality of `self` is also in `other`.
    pub fn is_subset(&self, other: &ModalitySet) -> bool {
        (!self.text || other.text) && (!self.video || other.video) && (!self.audio || other.audio)
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.text, "text"), (self.video, "video"), (self.audio, "audio")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for ModalitySet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut m = ModalitySet::new(false, false, false);
        for part in s.split('+').map(str::trim) {
            let slot = match part {
                "text" => &mut m.text,
                "video" => &mut m.video,
                "audio" => &mut m.audio,
                other => return Err(format!("unknown modality `{other}` in `{s}`")),
            };
            if *slot {
                return Err(format!("modality `{part}` repeated in `{s}`"));
            }
            *slot = true;
        }
        if m.is_empty() {
            return Err("a modality set needs at least one modality".into());
        }
        Ok(m)
    }
}

impl Serialize for ModalitySet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModalitySet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineVariant {
    ClueTwoStage,
    ObjectiveTwoStage,
    VideoOnlyOneStage,
}

impl PipelineVariant {
    pub fn stage1_mode(&self) -> Option<Stage1Mode> {
        match self {
            PipelineVariant::ClueTwoStage => Some(Stage1Mode::EmotionalClue),
            PipelineVariant::ObjectiveTwoStage => Some(Stage1Mode::ObjectiveDescription),
            PipelineVariant::VideoOnlyOneStage => None,
        }
    }
}

impl fmt::Display for PipelineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineVariant::ClueTwoStage => "clue-two-stage",
            PipelineVariant::ObjectiveTwoStage => "objective-two-stage",
            PipelineVariant::VideoOnlyOneStage => "video-one-stage",
        })
    }
}

/// One fully bound configuration. Bindings and sampling that a cell does
/// not use are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub variant: PipelineVariant,
    pub modalities: ModalitySet,
    pub llm: Option<BackendBinding>,
    pub video: Option<BackendBinding>,
    pub audio: Option<BackendBinding>,
    pub design: HardPromptDesign,
    pub strategy: CompositeStrategy,
    pub context: ContextLevel,
    pub sampling: Option<SamplingPolicy>,
}

impl Cell {
    /// Clears every choice the cell's configuration never reads, so that
    /// equivalent cells compare equal.
    pub fn canonical(mut self) -> Self {
        let m = self.modalities;
        if self.variant == PipelineVariant::ObjectiveTwoStage && !m.video && !m.audio {
            self.variant = PipelineVariant::ClueTwoStage;
        }
        if self.variant == PipelineVariant::VideoOnlyOneStage {
            self.llm = None;
        }
        if !m.video {
            self.video = None;
            self.sampling = None;
        }
        if !m.audio {
            self.audio = None;
        }
        self
    }
}

/// Checks that a configuration can run: every active modality has a
/// binding of the right capability, and the one-stage setup sees video
/// without audio and makes a single call.
pub fn validate_configuration(
    variant: PipelineVariant,
    modalities: ModalitySet,
    llm: Option<&BackendBinding>,
    video: Option<&BackendBinding>,
    audio: Option<&BackendBinding>,
    strategy: &CompositeStrategy,
) -> Result<(), PipelineError> {
    let err = |m: String| Err(PipelineError::Config(m));
    if modalities.is_empty() {
        return err("modality set is empty".into());
    }
    if let Err(e) = strategy.validate() {
        return err(e.to_string());
    }
    if modalities.video {
        match video {
            None => return err("video modality is active but no video binding is set".into()),
            Some(b) if b.capability != Capability::TextFrames => {
                return err(format!("video binding `{}` lacks text+frames capability", b.backend_id));
            }
            _ => {}
        }
    }
    if modalities.audio {
        match audio {
            None => return err("audio modality is active but no audio binding is set".into()),
            Some(b) if b.capability != Capability::TextAudio => {
                return err(format!("audio binding `{}` lacks text+audio capability", b.backend_id));
            }
            _ => {}
        }
    }
    match variant {
        PipelineVariant::VideoOnlyOneStage => {
            if !modalities.video || modalities.audio {
                return err(format!("one-stage variant needs video without audio, got `{modalities}`"));
            }
            if *strategy != CompositeStrategy::None {
                return err(format!("one-stage variant takes no composite strategy, got `{strategy}`"));
            }
        }
        PipelineVariant::ClueTwoStage | PipelineVariant::ObjectiveTwoStage => {
            if llm.is_none() {
                return err("two-stage variant needs a Stage-2 llm binding".into());
            }
        }
    }
    Ok(())
}

pub fn validate_cell(cell: &Cell) -> Result<(), PipelineError> {
    validate_configuration(
        cell.variant,
        cell.modalities,
        cell.llm.as_ref(),
        cell.video.as_ref(),
        cell.audio.as_ref(),
        &cell.strategy,
    )?;
    if cell.modalities.video && cell.sampling.is_none() {
        return Err(PipelineError::Config("video modality is active but no sampling policy is set".into()));
    }
    if let Some(p) = &cell.sampling {
        p.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    Ok(())
}

/// The outcome of one (spec, sample, repeat) unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub spec: String,
    pub repeat: u32,
    pub labels: EmotionLabelSet,
    /// False when no emotion list could be recovered; such records are
    /// kept but left out of the metrics.
    pub valid: bool,
    pub stage1: BTreeMap<Modality, String>,
    pub stage2_text: String,
    pub calls: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deviations: Vec<String>,
}

/// Shared, read-only machinery for running units.
pub struct PipelineContext<'a> {
    pub client: &'a BackendClient,
    pub engine: &'a PromptEngine,
    pub extractor: &'a ExtractorConfig,
    /// Needed only by group-majority self-consistency.
    pub grouper: Option<&'a Grouper>,
    /// Re-issue Stage-1 calls per repeat instead of reusing the first.
    pub rerun_stage1: bool,
}

/// Identifies a unit in request tags and seeds.
#[derive(Debug, Clone, Copy)]
pub struct UnitRef<'a> {
    pub spec: &'a str,
    pub repeat: u32,
}

impl UnitRef<'_> {
    fn suffix(&self) -> String {
        let short = &self.spec[..self.spec.len().min(8)];
        format!("@{short}#r{}", self.repeat)
    }
}

pub fn run_unit(ctx: &PipelineContext<'_>, cell: &Cell, sample: &Sample, unit: UnitRef<'_>) -> Result<Prediction, PipelineError> {
    match cell.variant {
        PipelineVariant::VideoOnlyOneStage => run_one_stage(ctx, cell, sample, unit),
        _ => run_two_stage(ctx, cell, sample, unit),
    }
}

fn video_frames(ctx: &PipelineContext<'_>, cell: &Cell, sample: &Sample, at: &str) -> Result<Vec<MediaPayload>, PipelineError> {
    let policy = cell
        .sampling
        .as_ref()
        .ok_or_else(|| PipelineError::Config("video modality is active but no sampling policy is set".into()))?;
    let sampling = |source| PipelineError::Sampling { at: at.to_string(), source };
    let plan = policy.plan(sample.duration_s, sample.native_fps).map_err(sampling)?;
    extract_frames(&sample.video_ref, &plan, ctx.extractor).map_err(sampling)
}

fn stage1_call(
    ctx: &PipelineContext<'_>,
    cell: &Cell,
    sample: &Sample,
    unit: UnitRef<'_>,
    modality: Modality,
    mode: Stage1Mode,
) -> Result<String, PipelineError> {
    let at = format!("{}/stage1/{modality}", sample.id);
    let binding = match modality {
        Modality::Video => cell.video.as_ref(),
        Modality::Audio => cell.audio.as_ref(),
    }
    .ok_or_else(|| PipelineError::Config(format!("{modality} modality is active but no binding is set")))?;
    let prompt = ctx
        .engine
        .render_stage1(modality, mode, sample, ContextLevel::SubtitleOnly)
        .map_err(|e| PipelineError::prompt(&at, e))?;
    let mut binding = binding.clone();
    if ctx.rerun_stage1 {
        binding.decode = binding.decode.with_derived_seed(&[u64::from(unit.repeat)]);
    }
    let mut req = ModelRequest::text(binding, prompt, at.clone());
    match modality {
        Modality::Video => req.frames = video_frames(ctx, cell, sample, &at)?,
        Modality::Audio => {
            let path = sample.audio_ref.as_ref().ok_or_else(|| PipelineError::Media {
                at: at.clone(),
                message: "sample has no audio".into(),
            })?;
            req.audio = Some(MediaPayload::audio_from_file(path).map_err(|e| PipelineError::Media {
                at: at.clone(),
                message: format!("{}: {e}", path.display()),
            })?);
        }
    }
    let resp = ctx.client.invoke(&req).map_err(|source| PipelineError::Backend { at, source })?;
    Ok(resp.text)
}

/// Stage 1 per active non-text modality (video and audio in parallel), then
/// Stage 2 over the clues and subtitle with the cell's strategy.
pub fn run_two_stage(ctx: &PipelineContext<'_>, cell: &Cell, sample: &Sample, unit: UnitRef<'_>) -> Result<Prediction, PipelineError> {
    let mode = cell
        .variant
        .stage1_mode()
        .ok_or_else(|| PipelineError::Config("run_two_stage called with a one-stage cell".into()))?;
    let mut deviations = Vec::new();
    let mut active = cell.modalities;
    if active.audio && !sample.has_audio() {
        active.audio = false;
        deviations.push("sample has no audio; audio evidence skipped".to_string());
    }

    let (video, audio) = std::thread::scope(|s| {
        let v = active
            .video
            .then(|| s.spawn(|| stage1_call(ctx, cell, sample, unit, Modality::Video, mode)));
        let a = active
            .audio
            .then(|| stage1_call(ctx, cell, sample, unit, Modality::Audio, mode));
        let v = v.map(|h| h.join().expect("stage-1 worker panicked"));
        (v, a)
    });
    let mut stage1 = BTreeMap::new();
    let mut clues = Vec::new();
    for (modality, result) in [(Modality::Video, video), (Modality::Audio, audio)] {
        if let Some(r) = result {
            let text = r?;
            clues.push(Clue {
                modality,
                mode,
                text: text.clone(),
            });
            stage1.insert(modality, text);
        }
    }

    let at = format!("{}/stage2", sample.id);
    let evidence = Evidence {
        subtitle: active.text.then(|| sample.subtitle.clone()),
        clues,
        attached_frames: false,
    };
    let context = context_block(sample, cell.context).map_err(|e| PipelineError::prompt(&at, e))?;
    let prompt = match ctx.engine.render_stage2(cell.design, &evidence, &context) {
        Ok(p) => p,
        Err(PromptError::EmptyEvidence) => {
            deviations.push("no evidence left for Stage 2".to_string());
            return Ok(Prediction {
                sample_id: sample.id.clone(),
                spec: unit.spec.to_string(),
                repeat: unit.repeat,
                labels: EmotionLabelSet::new(),
                valid: false,
                stage1,
                stage2_text: String::new(),
                calls: 0,
                deviations,
            });
        }
        Err(e) => return Err(PipelineError::prompt(&at, e)),
    };
    let llm = cell
        .llm
        .as_ref()
        .ok_or_else(|| PipelineError::Config("two-stage variant needs a Stage-2 llm binding".into()))?;
    let session = LlmSession::new(ctx.client, llm, at.clone(), vec![u64::from(unit.repeat)]).with_suffix(unit.suffix());
    let outcome =
        run_strategy(ctx.engine, &session, &cell.strategy, &prompt, ctx.grouper).map_err(|e| PipelineError::prompt(&at, e))?;
    deviations.extend(outcome.deviations);
    Ok(Prediction {
        sample_id: sample.id.clone(),
        spec: unit.spec.to_string(),
        repeat: unit.repeat,
        valid: outcome.labels.is_some(),
        labels: outcome.labels.unwrap_or_default(),
        calls: stage1.len() + outcome.calls,
        stage1,
        stage2_text: outcome.final_text,
        deviations,
    })
}

/// A single frames-plus-instruction call to the Video-LLM. The subtitle is
/// included when the text modality is active.
pub fn run_one_stage(ctx: &PipelineContext<'_>, cell: &Cell, sample: &Sample, unit: UnitRef<'_>) -> Result<Prediction, PipelineError> {
    let at = format!("{}/one_stage", sample.id);
    let binding = cell
        .video
        .as_ref()
        .ok_or_else(|| PipelineError::Config("one-stage variant needs a video binding".into()))?;
    let context = context_block(sample, cell.context).map_err(|e| PipelineError::prompt(&at, e))?;
    let subtitle = cell.modalities.text.then_some(sample.subtitle.as_str());
    let prompt = ctx
        .engine
        .render_one_stage(cell.design, subtitle, &context)
        .map_err(|e| PipelineError::prompt(&at, e))?;
    let mut binding = binding.clone();
    binding.decode = binding.decode.with_derived_seed(&[u64::from(unit.repeat), 0]);
    let mut req = ModelRequest::text(binding, prompt, format!("{at}{}", unit.suffix()));
    req.frames = video_frames(ctx, cell, sample, &at)?;
    let resp = ctx.client.invoke(&req).map_err(|source| PipelineError::Backend { at, source })?;
    let labels = parse_emotion_list(&resp.text).ok();
    let mut deviations = Vec::new();
    if labels.is_none() {
        deviations.push("final output has no parseable emotion list".to_string());
    }
    Ok(Prediction {
        sample_id: sample.id.clone(),
        spec: unit.spec.to_string(),
        repeat: unit.repeat,
        valid: labels.is_some(),
        labels: labels.unwrap_or_default(),
        stage1: BTreeMap::new(),
        stage2_text: resp.text,
        calls: 1,
        deviations,
    })
}
