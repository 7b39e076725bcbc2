use super::PromptError;
use crate::eval::grouping::bracket_bodies;
use crate::labels::{normalize_label, EmotionLabelSet};

const MAX_TERM_WORDS: usize = 5;
const MAX_TERM_CHARS: usize = 60;
const SEPARATORS: [char; 4] = [',', '，', '、', ';'];

/// Extracts the final emotion list from free-form model output.
///
/// Reasoning wrapped in `<think>` tags is ignored. The last bracketed list of
/// short terms wins; failing that, the last line holding two or more quoted
/// terms; failing that, the comma-separated tail of the last line after its
/// last colon.
pub fn parse_emotion_list(text: &str) -> Result<EmotionLabelSet, PromptError> {
    let visible = strip_think(text);
    bracket_rule(&visible)
        .or_else(|| quoted_rule(&visible))
        .or_else(|| last_line_rule(&visible))
        .ok_or_else(|| PromptError::Unparseable {
            output: text.to_string(),
        })
}

fn strip_think(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    loop {
        let Some(start) = find_ci(rest, "<think>") else {
            out.push_str(rest);
            break;
        };
        out.push_str(&rest[..start]);
        let after = &rest[start + "<think>".len()..];
        match find_ci(after, "</think>") {
            Some(end) => rest = &after[end + "</think>".len()..],
            // Unterminated: everything after the tag is still reasoning.
            None => break,
        }
    }
    out
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    haystack.to_ascii_lowercase().find(needle)
}

fn acceptable(term: &str) -> bool {
    term.chars().count() <= MAX_TERM_CHARS && term.split_whitespace().count() <= MAX_TERM_WORDS
}

fn is_placeholder(term: &str) -> bool {
    term.strip_prefix("emotion")
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

fn terms(body: &str) -> Option<EmotionLabelSet> {
    let mut set = EmotionLabelSet::new();
    for raw in body.split(SEPARATORS) {
        let Some(t) = normalize_label(raw.trim_matches(|c: char| c == '"' || c == '\'' || c == '“' || c == '”')) else {
            continue;
        };
        if !acceptable(&t) {
            return None;
        }
        set.push(&t);
    }
    if set.is_empty() || set.iter().all(is_placeholder) {
        return None;
    }
    Some(set)
}

fn bracket_rule(text: &str) -> Option<EmotionLabelSet> {
    bracket_bodies(text).into_iter().rev().find_map(terms)
}

fn quoted_strings(line: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (i, c) in line.char_indices() {
        match (c, open) {
            ('"' | '“', None) => open = Some(i + c.len_utf8()),
            ('"' | '”', Some(s)) => {
                out.push(&line[s..i]);
                open = None;
            }
            _ => {}
        }
    }
    out
}

fn quoted_rule(text: &str) -> Option<EmotionLabelSet> {
    text.lines().rev().find_map(|line| {
        let q = quoted_strings(line);
        if q.len() < 2 {
            return None;
        }
        let mut set = EmotionLabelSet::new();
        for s in q {
            let t = normalize_label(s)?;
            if !acceptable(&t) {
                return None;
            }
            set.push(&t);
        }
        (set.len() >= 2).then_some(set)
    })
}

fn last_line_rule(text: &str) -> Option<EmotionLabelSet> {
    let line = text.lines().rev().map(str::trim).find(|l| !l.is_empty())?;
    let tail = line.rsplit_once(':').map_or(line, |(_, t)| t);
    let tail = tail.trim().trim_end_matches('.');
    terms(tail)
}
