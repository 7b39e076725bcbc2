use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};

use super::{parse_emotion_list, CompositeStrategy, PromptEngine, PromptError, SelectionMode, Stage2Prompt};
use crate::backend::{BackendBinding, BackendClient, DecodeParams, ModelRequest};
use crate::eval::Grouper;
use crate::labels::EmotionLabelSet;

pub const MAX_SUBQUESTIONS: usize = 5;
const SAMPLING_TEMPERATURE: f64 = 0.7;

/// One model conversation scope: every call is tagged
/// `<prefix>/<step><suffix>` and gets a seed derived from the session salt
/// and its ordinal.
pub struct LlmSession<'a> {
    pub client: &'a BackendClient,
    pub binding: &'a BackendBinding,
    pub tag_prefix: String,
    pub tag_suffix: String,
    pub salt: Vec<u64>,
    calls: Cell<usize>,
}

impl<'a> LlmSession<'a> {
    pub fn new(client: &'a BackendClient, binding: &'a BackendBinding, tag_prefix: impl Into<String>, salt: Vec<u64>) -> Self {
        Self {
            client,
            binding,
            tag_prefix: tag_prefix.into(),
            tag_suffix: String::new(),
            salt,
            calls: Cell::new(0),
        }
    }

    pub fn with_suffix(mut self, suffix: impl Into<String>) -> Self {
        self.tag_suffix = suffix.into();
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    fn call_with(&self, step: &str, prompt: String, decode: &DecodeParams) -> Result<String, PromptError> {
        let n = self.calls.get();
        self.calls.set(n + 1);
        let mut salt = self.salt.clone();
        salt.push(n as u64);
        let mut binding = self.binding.clone();
        binding.decode = decode.with_derived_seed(&salt);
        let req = ModelRequest::text(binding, prompt, format!("{}/{step}{}", self.tag_prefix, self.tag_suffix));
        Ok(self.client.invoke(&req)?.text)
    }

    pub fn call(&self, step: &str, prompt: String) -> Result<String, PromptError> {
        self.call_with(step, prompt, &self.binding.decode)
    }
}

/// Result of running one Stage-2 strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyOutcome {
    /// `None` when no usable emotion list could be recovered.
    pub labels: Option<EmotionLabelSet>,
    pub final_text: String,
    pub calls: usize,
    pub deviations: Vec<String>,
}

pub fn run_strategy(
    engine: &PromptEngine,
    session: &LlmSession<'_>,
    strategy: &CompositeStrategy,
    prompt: &Stage2Prompt,
    grouper: Option<&Grouper>,
) -> Result<StrategyOutcome, PromptError> {
    strategy.validate()?;
    match *strategy {
        CompositeStrategy::None => run_single(session, prompt),
        CompositeStrategy::SelfConsistency { k, selection } => {
            run_self_consistency(engine, session, prompt, k as usize, selection, grouper)
        }
        CompositeStrategy::SelfRefine { iters } => run_self_refine(engine, session, prompt, iters as usize),
        CompositeStrategy::LeastToMost => run_least_to_most(engine, session, prompt),
    }
}

fn finish(session: &LlmSession<'_>, text: String, mut deviations: Vec<String>) -> StrategyOutcome {
    let labels = parse_emotion_list(&text).ok();
    if labels.is_none() {
        deviations.push("final output has no parseable emotion list".into());
    }
    StrategyOutcome {
        labels,
        final_text: text,
        calls: session.calls(),
        deviations,
    }
}

pub fn run_single(session: &LlmSession<'_>, prompt: &Stage2Prompt) -> Result<StrategyOutcome, PromptError> {
    let text = session.call("answer", prompt.text.clone())?;
    Ok(finish(session, text, Vec::new()))
}

pub fn run_self_consistency(
    engine: &PromptEngine,
    session: &LlmSession<'_>,
    prompt: &Stage2Prompt,
    k: usize,
    selection: SelectionMode,
    grouper: Option<&Grouper>,
) -> Result<StrategyOutcome, PromptError> {
    let mut decode = session.binding.decode.clone();
    if decode.temperature <= 0.0 {
        decode.temperature = SAMPLING_TEMPERATURE;
    }
    let mut candidates = Vec::with_capacity(k);
    for i in 0..k {
        candidates.push(session.call_with(&format!("sc/gen/{}", i + 1), prompt.text.clone(), &decode)?);
    }
    let parsed: Vec<EmotionLabelSet> = candidates.iter().filter_map(|c| parse_emotion_list(c).ok()).collect();
    let mut deviations = Vec::new();
    if parsed.len() < k {
        deviations.push(format!("{} of {k} candidates unparseable", k - parsed.len()));
    }
    match selection {
        SelectionMode::LlmSelect => {
            let listing: String = candidates
                .iter()
                .enumerate()
                .map(|(i, c)| format!("Answer {}:\n{}\n\n", i + 1, c.trim()))
                .collect();
            let select_prompt = engine
                .templates()
                .render("sc_select", &[("task", &prompt.text), ("candidates", &listing)])?;
            let chosen = session.call("sc/select", select_prompt)?;
            if parse_emotion_list(&chosen).is_err() {
                if let Some(first) = parsed.first() {
                    deviations.push("selection unparseable; first parseable candidate used".into());
                    return Ok(StrategyOutcome {
                        labels: Some(first.clone()),
                        final_text: chosen,
                        calls: session.calls(),
                        deviations,
                    });
                }
            }
            Ok(finish(session, chosen, deviations))
        }
        SelectionMode::GroupMajority => {
            let grouper = grouper.ok_or_else(|| {
                PromptError::InvalidStrategy("group-majority self-consistency needs a grouping oracle".into())
            })?;
            let labels = if parsed.is_empty() {
                None
            } else {
                Some(group_majority(&parsed, k, grouper, &mut deviations)?)
            };
            if labels.is_none() {
                deviations.push("final output has no parseable emotion list".into());
            }
            Ok(StrategyOutcome {
                final_text: labels.as_ref().map(EmotionLabelSet::to_list_string).unwrap_or_default(),
                labels,
                calls: session.calls(),
                deviations,
            })
        }
    }
}

/// Keeps synonym groups named by at least half of the `k` candidates, each
/// represented by its most frequent member. If no group reaches the
/// threshold, the best-supported groups are kept.
pub(crate) fn group_majority(
    candidates: &[EmotionLabelSet],
    k: usize,
    grouper: &Grouper,
    deviations: &mut Vec<String>,
) -> Result<EmotionLabelSet, PromptError> {
    let all: Vec<&str> = candidates.iter().flat_map(|c| c.iter()).collect();
    let grouped = grouper.group_labels(&all)?;
    if let Some(d) = grouped.deviation {
        deviations.push(d);
    }
    let a = &grouped.assignment;
    let mut support: BTreeMap<usize, usize> = BTreeMap::new();
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for c in candidates {
        let groups: BTreeSet<usize> = c.iter().filter_map(|l| a.group_of(l)).collect();
        for g in groups {
            *support.entry(g).or_default() += 1;
        }
        for l in c.iter() {
            *freq.entry(l).or_default() += 1;
        }
    }
    let threshold = k.div_ceil(2);
    let best = support.values().copied().max().unwrap_or(0);
    let cut = if best >= threshold {
        threshold
    } else {
        deviations.push(format!("no label group reached {threshold} of {k} votes; kept the best-supported groups"));
        best
    };
    let mut kept: Vec<(usize, &str)> = support
        .iter()
        .filter(|(_, s)| **s >= cut)
        .map(|(g, s)| {
            let rep = freq
                .iter()
                .filter(|(l, _)| a.group_of(l) == Some(*g))
                .max_by(|x, y| x.1.cmp(y.1).then_with(|| y.0.cmp(x.0)))
                .map(|(l, _)| *l)
                .expect("every supported group has a member");
            (*s, rep)
        })
        .collect();
    kept.sort_by(|x, y| y.0.cmp(&x.0).then_with(|| x.1.cmp(y.1)));
    Ok(EmotionLabelSet::from_terms(kept.into_iter().map(|(_, l)| l)))
}

pub fn run_self_refine(
    engine: &PromptEngine,
    session: &LlmSession<'_>,
    prompt: &Stage2Prompt,
    iters: usize,
) -> Result<StrategyOutcome, PromptError> {
    let t = engine.templates();
    let mut answer = session.call("refine/initial", prompt.text.clone())?;
    let mut last_good = parse_emotion_list(&answer).ok();
    for n in 1..=iters {
        let critique = session.call(
            &format!("refine/critique/{n}"),
            t.render("refine_critique", &[("task", &prompt.text), ("answer", &answer)])?,
        )?;
        let revised = session.call(
            &format!("refine/revise/{n}"),
            t.render(
                "refine_revise",
                &[("task", &prompt.text), ("answer", &answer), ("feedback", &critique)],
            )?,
        )?;
        if let Ok(l) = parse_emotion_list(&revised) {
            last_good = Some(l);
        }
        answer = revised;
    }
    let mut deviations = Vec::new();
    let labels = match parse_emotion_list(&answer) {
        Ok(l) => Some(l),
        Err(_) => {
            if last_good.is_some() {
                deviations.push("final revision unparseable; last parseable answer used".into());
            } else {
                deviations.push("final output has no parseable emotion list".into());
            }
            last_good
        }
    };
    Ok(StrategyOutcome {
        labels,
        final_text: answer,
        calls: session.calls(),
        deviations,
    })
}

/// Numbered lines (`1.`, `2)`, `3:`) of a decomposition, at most
/// [`MAX_SUBQUESTIONS`].
pub fn parse_subquestions(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|line| {
            let line = line.trim().trim_start_matches(['-', '*', ' ']);
            let digits = line.bytes().take_while(u8::is_ascii_digit).count();
            if digits == 0 || digits > 2 {
                return None;
            }
            let rest = line[digits..].strip_prefix(['.', ')', ':'])?.trim();
            (!rest.is_empty()).then(|| rest.to_string())
        })
        .take(MAX_SUBQUESTIONS)
        .collect()
}

pub fn run_least_to_most(
    engine: &PromptEngine,
    session: &LlmSession<'_>,
    prompt: &Stage2Prompt,
) -> Result<StrategyOutcome, PromptError> {
    let t = engine.templates();
    let base = [("context", prompt.context.as_str()), ("scene", prompt.scene.as_str())];
    let decomposition = session.call("l2m/decompose", t.render("l2m_decompose", &base)?)?;
    let questions = parse_subquestions(&decomposition);
    if questions.is_empty() {
        let text = session.call("l2m/fallback", prompt.text.clone())?;
        return Ok(finish(
            session,
            text,
            vec!["decomposition produced no sub-questions; answered directly".into()],
        ));
    }
    let mut solved = String::new();
    for (i, q) in questions.iter().enumerate() {
        let answer = session.call(
            &format!("l2m/solve/{}", i + 1),
            t.render(
                "l2m_solve",
                &[base[0], base[1], ("solved", &solved), ("question", q)],
            )?,
        )?;
        solved.push_str(&format!("Sub-question {}: {q}\nAnswer: {}\n", i + 1, answer.trim()));
    }
    let text = session.call("l2m/synthesize", t.render("l2m_synthesize", &[base[0], base[1], ("solved", &solved)])?)?;
    Ok(finish(session, text, Vec::new()))
}
