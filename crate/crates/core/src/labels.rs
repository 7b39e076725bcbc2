//! Emotion label normalization and the ordered, deduplicated label set.

use serde::{Deserialize, Serialize};

/// Normalizes one free-text emotion term.
///
/// Lowercases (Unicode-aware), trims, strips surrounding punctuation and
/// collapses internal whitespace runs to a single space. Returns `None` when
/// nothing is left.
pub fn normalize_label(raw: &str) -> Option<String> {
    let lowered = raw.to_lowercase();
    let stripped = lowered.trim_matches(|c: char| !c.is_alphanumeric());
    let collapsed = stripped.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        None
    } else {
        Some(collapsed)
    }
}

/// Ordered list of normalized emotion terms, first occurrence wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct EmotionLabelSet {
    labels: Vec<String>,
}

impl EmotionLabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from raw terms, normalizing each and dropping empties and
    /// duplicates while preserving first-seen order.
    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = Self::new();
        for t in terms {
            set.push(t.as_ref());
        }
        set
    }

    /// Adds a raw term. Returns true if it was new.
    pub fn push(&mut self, raw: &str) -> bool {
        match normalize_label(raw) {
            Some(norm) if !self.labels.contains(&norm) => {
                self.labels.push(norm);
                true
            }
            _ => false,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.labels
    }

    /// Renders as `[a, b, c]`, the list form models are asked to produce.
    pub fn to_list_string(&self) -> String {
        format!("[{}]", self.labels.join(", "))
    }
}

impl From<Vec<String>> for EmotionLabelSet {
    fn from(v: Vec<String>) -> Self {
        Self::from_terms(v)
    }
}

impl From<EmotionLabelSet> for Vec<String> {
    fn from(s: EmotionLabelSet) -> Self {
        s.labels
    }
}

impl<'a> IntoIterator for &'a EmotionLabelSet {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.labels.iter()
    }
}
