use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EvalError;
use crate::backend::{BackendBinding, BackendClient, ModelRequest};
use crate::labels::normalize_label;

/// Instruction sent to an LLM grouping oracle, followed by the label list.
pub const GROUPING_PROMPT: &str = "Please assume the role of an expert in the field of emotions. We provide a set of emotions. Please group the emotions, with each group containing synonyms or consistent emotional terms. Directly output the results, with each group in list format.";

/// Partition of a label universe into groups with dense ids from 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<String>>", into = "Vec<Vec<String>>")]
pub struct GroupAssignment {
    groups: Vec<Vec<String>>,
    mapping: BTreeMap<String, usize>,
}

impl GroupAssignment {
    pub fn from_groups(groups: Vec<Vec<String>>) -> Result<Self, EvalError> {
        let mut mapping = BTreeMap::new();
        let mut kept = Vec::with_capacity(groups.len());
        for g in groups {
            if g.is_empty() {
                return Err(EvalError::InvalidPartition("empty group".into()));
            }
            let id = kept.len();
            for label in &g {
                if mapping.insert(label.clone(), id).is_some() {
                    return Err(EvalError::InvalidPartition(format!("`{label}` appears in two groups")));
                }
            }
            kept.push(g);
        }
        Ok(Self { groups: kept, mapping })
    }

    pub fn singletons<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut seen = BTreeSet::new();
        let groups = labels
            .iter()
            .map(|l| l.as_ref().to_string())
            .filter(|l| seen.insert(l.clone()))
            .map(|l| vec![l])
            .collect();
        Self::from_groups(groups).expect("distinct singletons form a partition")
    }

    pub fn group_of(&self, label: &str) -> Option<usize> {
        self.mapping.get(label).copied()
    }

    pub fn groups(&self) -> &[Vec<String>] {
        &self.groups
    }

    pub fn mapping(&self) -> &BTreeMap<String, usize> {
        &self.mapping
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn covers<S: AsRef<str>>(&self, labels: &[S]) -> bool {
        labels.iter().all(|l| self.mapping.contains_key(l.as_ref()))
    }
}

impl TryFrom<Vec<Vec<String>>> for GroupAssignment {
    type Error = EvalError;

    fn try_from(v: Vec<Vec<String>>) -> Result<Self, Self::Error> {
        Self::from_groups(v)
    }
}

impl From<GroupAssignment> for Vec<Vec<String>> {
    fn from(a: GroupAssignment) -> Self {
        a.groups
    }
}

/// Reads every bracketed list in `text`, in order, as one group.
///
/// Labels are normalized; labels outside `inputs` and repeats of an already
/// placed label are dropped; inputs not mentioned become trailing singletons.
pub fn parse_grouping_response(text: &str, inputs: &[String]) -> Result<Vec<Vec<String>>, EvalError> {
    let universe: BTreeSet<&str> = inputs.iter().map(String::as_str).collect();
    let mut placed: BTreeSet<String> = BTreeSet::new();
    let mut groups = Vec::new();
    let mut found_any = false;
    for body in bracket_bodies(text) {
        found_any = true;
        let mut group = Vec::new();
        for raw in body.split([',', '，', '、', ';']) {
            let Some(label) = normalize_label(raw) else { continue };
            if universe.contains(label.as_str()) && placed.insert(label.clone()) {
                group.push(label);
            }
        }
        if !group.is_empty() {
            groups.push(group);
        }
    }
    if !found_any {
        return Err(EvalError::Unparseable);
    }
    for l in inputs {
        if placed.insert(l.clone()) {
            groups.push(vec![l.clone()]);
        }
    }
    Ok(groups)
}

/// Innermost `[...]` bodies in order of their closing bracket.
pub(crate) fn bracket_bodies(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (i, c) in text.char_indices() {
        match c {
            '[' => open = Some(i + 1),
            ']' => {
                if let Some(start) = open.take() {
                    out.push(&text[start..i]);
                }
            }
            _ => {}
        }
    }
    out
}

/// Result of one grouping request.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouped {
    pub assignment: GroupAssignment,
    /// Set when the oracle failed and labels fell back to singletons.
    pub deviation: Option<String>,
}

pub trait GroupingOracle: Send + Sync {
    /// Stable identity folded into cache keys.
    fn identity(&self) -> String;
    /// Partitions sorted, distinct, normalized labels.
    fn propose(&self, labels: &[String]) -> Result<Grouped, EvalError>;
}

/// Synonym table: one class per line, comma-separated terms.
#[derive(Debug, Clone, Default)]
pub struct LexiconOracle {
    class_of: HashMap<String, usize>,
    fingerprint: String,
}

pub fn parse_lexicon(text: &str) -> Result<LexiconOracle, EvalError> {
    let mut class_of = HashMap::new();
    let mut classes = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let terms: Vec<String> = line.split(',').filter_map(normalize_label).collect();
        if terms.is_empty() {
            continue;
        }
        for t in terms {
            if let Some(prev) = class_of.insert(t.clone(), classes) {
                if prev != classes {
                    return Err(EvalError::Lexicon {
                        line: i + 1,
                        message: format!("term `{t}` already belongs to an earlier class"),
                    });
                }
            }
        }
        classes += 1;
    }
    Ok(LexiconOracle {
        class_of,
        fingerprint: hex::encode(Sha256::digest(text.as_bytes())),
    })
}

impl LexiconOracle {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        parse_lexicon(&std::fs::read_to_string(path)?)
    }

    /// The synonym table shipped with the crate.
    pub fn builtin() -> Self {
        parse_lexicon(include_str!("../../data/lexicon.txt")).expect("builtin lexicon parses")
    }
}

impl GroupingOracle for LexiconOracle {
    fn identity(&self) -> String {
        format!("lexicon:{}", self.fingerprint)
    }

    fn propose(&self, labels: &[String]) -> Result<Grouped, EvalError> {
        let mut by_class: BTreeMap<usize, usize> = BTreeMap::new();
        let mut groups: Vec<Vec<String>> = Vec::new();
        for l in labels {
            match self.class_of.get(l) {
                Some(&c) => match by_class.get(&c) {
                    Some(&gi) => groups[gi].push(l.clone()),
                    None => {
                        by_class.insert(c, groups.len());
                        groups.push(vec![l.clone()]);
                    }
                },
                None => groups.push(vec![l.clone()]),
            }
        }
        Ok(Grouped {
            assignment: GroupAssignment::from_groups(groups)?,
            deviation: None,
        })
    }
}

/// Groups labels by asking a text model.
pub struct LlmGroupingOracle {
    client: Arc<BackendClient>,
    binding: BackendBinding,
}

impl LlmGroupingOracle {
    pub fn new(client: Arc<BackendClient>, binding: BackendBinding) -> Self {
        Self { client, binding }
    }

    pub fn prompt_for(labels: &[String]) -> String {
        format!("{GROUPING_PROMPT}\nInput: [{}]\nOutput:", labels.join(", "))
    }
}

impl GroupingOracle for LlmGroupingOracle {
    fn identity(&self) -> String {
        format!("llm:{}:{}", self.binding.backend_id, self.binding.model_id)
    }

    fn propose(&self, labels: &[String]) -> Result<Grouped, EvalError> {
        let prompt = Self::prompt_for(labels);
        for attempt in 0..2u64 {
            let mut binding = self.binding.clone();
            if attempt > 0 {
                // A fresh seed so the retry is not answered from the cache.
                binding.decode = binding.decode.with_derived_seed(&[attempt]);
            }
            let req = ModelRequest::text(binding, prompt.clone(), format!("eval/grouping/{attempt}"));
            let resp = self.client.invoke(&req)?;
            if let Ok(groups) = parse_grouping_response(&resp.text, labels) {
                return Ok(Grouped {
                    assignment: GroupAssignment::from_groups(groups)?,
                    deviation: None,
                });
            }
        }
        Ok(Grouped {
            assignment: GroupAssignment::singletons(labels),
            deviation: Some(format!(
                "grouping response unparseable twice; {} labels scored as singletons",
                labels.len()
            )),
        })
    }
}

type Slot = Arc<Mutex<Option<GroupAssignment>>>;

/// Caching front for a grouping oracle.
///
/// Results are keyed by the digest of the sorted, distinct label tuple. The
/// cache is in memory and, when a directory is given, one JSON file per key.
/// Concurrent requests for the same key wait on one oracle call.
pub struct Grouper {
    oracle: Box<dyn GroupingOracle>,
    cache_dir: Option<PathBuf>,
    slots: Mutex<HashMap<String, Slot>>,
    oracle_calls: AtomicUsize,
}

impl Grouper {
    pub fn new(oracle: Box<dyn GroupingOracle>, cache_dir: Option<PathBuf>) -> Result<Self, EvalError> {
        if let Some(d) = &cache_dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(Self {
            oracle,
            cache_dir,
            slots: Mutex::new(HashMap::new()),
            oracle_calls: AtomicUsize::new(0),
        })
    }

    pub fn lexicon(lexicon: LexiconOracle) -> Self {
        Self::new(Box::new(lexicon), None).expect("no cache dir to create")
    }

    /// Number of times the underlying oracle has been consulted.
    pub fn oracle_calls(&self) -> usize {
        self.oracle_calls.load(Ordering::SeqCst)
    }

    fn key(&self, labels: &[String]) -> String {
        let mut h = Sha256::new();
        h.update(self.oracle.identity().as_bytes());
        for l in labels {
            h.update([0x1f]);
            h.update(l.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Groups the union of the given labels.
    pub fn group_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<Grouped, EvalError> {
        let canonical: Vec<String> = labels
            .iter()
            .filter_map(|l| normalize_label(l.as_ref()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if canonical.is_empty() {
            return Err(EvalError::EmptyLabels);
        }
        let key = self.key(&canonical);
        let slot = self
            .slots
            .lock()
            .expect("grouper poisoned")
            .entry(key.clone())
            .or_default()
            .clone();
        let mut guard = slot.lock().expect("grouper slot poisoned");
        if let Some(a) = guard.as_ref() {
            return Ok(Grouped {
                assignment: a.clone(),
                deviation: None,
            });
        }
        let file = self.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")));
        if let Some(path) = &file {
            if let Ok(bytes) = std::fs::read(path) {
                if let Ok(a) = serde_json::from_slice::<GroupAssignment>(&bytes) {
                    if a.covers(&canonical) {
                        *guard = Some(a.clone());
                        return Ok(Grouped {
                            assignment: a,
                            deviation: None,
                        });
                    }
                }
            }
        }
        self.oracle_calls.fetch_add(1, Ordering::SeqCst);
        let grouped = self.oracle.propose(&canonical)?;
        if grouped.deviation.is_none() {
            if let Some(path) = &file {
                let mut tmp = tempfile::NamedTempFile::new_in(path.parent().expect("cache file has a parent"))?;
                serde_json::to_writer(&mut tmp, &grouped.assignment).map_err(std::io::Error::from)?;
                tmp.persist(path).map_err(|e| e.error)?;
            }
            *guard = Some(grouped.assignment.clone());
        }
        Ok(grouped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{parse_mock_script, Capability, DecodeParams, MockEntry};

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_bracketed_groups_in_order() {
        let g = parse_grouping_response("[a, b]\n[c]", &strings(&["a", "b", "c"])).unwrap();
        assert_eq!(g, vec![strings(&["a", "b"]), strings(&["c"])]);
    }

    #[test]
    fn drops_unknown_and_appends_missing() {
        let g = parse_grouping_response("[a, b, z]", &strings(&["a", "b", "c"])).unwrap();
        assert_eq!(g, vec![strings(&["a", "b"]), strings(&["c"])]);
        let dup = parse_grouping_response("[a, b]\n[b, c]", &strings(&["a", "b", "c"])).unwrap();
        assert_eq!(dup, vec![strings(&["a", "b"]), strings(&["c"])]);
    }

    #[test]
    fn no_brackets_is_unparseable() {
        assert!(matches!(
            parse_grouping_response("no brackets here", &strings(&["a"])),
            Err(EvalError::Unparseable)
        ));
    }

    #[test]
    fn lexicon_groups_synonyms() {
        let lex = parse_lexicon("angry, furious\nhappy, joyful\n").unwrap();
        let grouper = Grouper::lexicon(lex);
        let g = grouper.group_labels(&["angry", "furious", "happy"]).unwrap();
        assert_eq!(g.assignment.len(), 2);
        assert_eq!(g.assignment.group_of("angry"), g.assignment.group_of("furious"));

        let single = grouper.group_labels(&["joy"]).unwrap();
        assert_eq!(single.assignment.groups(), &[strings(&["joy"])]);
    }

    #[test]
    fn lexicon_rejects_term_in_two_classes() {
        assert!(matches!(
            parse_lexicon("a, b\n\nb, c"),
            Err(EvalError::Lexicon { line: 3, .. })
        ));
    }

    #[test]
    fn builtin_lexicon_loads() {
        let lex = LexiconOracle::builtin();
        let g = lex.propose(&strings(&["angry", "furious", "happy"])).unwrap();
        assert_eq!(g.assignment.len(), 2);
    }

    fn llm_grouper(responses: &[&str], dir: Option<PathBuf>) -> (Grouper, Arc<BackendClient>) {
        let script: String = responses
            .iter()
            .map(|r| MockEntry::fifo("grouper", "eval/grouping", r).to_line() + "\n")
            .collect();
        let client = Arc::new(
            BackendClient::builder()
                .mock("g", parse_mock_script(&script).unwrap())
                .build()
                .unwrap(),
        );
        let binding = BackendBinding {
            backend_id: "grouper".into(),
            model_id: "gpt-3.5-turbo".into(),
            capability: Capability::Text,
            endpoint: "mock:g".into(),
            auth_ref: None,
            decode: DecodeParams::default(),
        };
        let oracle = LlmGroupingOracle::new(client.clone(), binding);
        (Grouper::new(Box::new(oracle), dir).unwrap(), client)
    }

    #[test]
    fn llm_oracle_maps_groups_in_response_order() {
        let (grouper, client) = llm_grouper(&["[angry, furious]\n[happy]"], None);
        let g = grouper.group_labels(&["happy", "furious", "angry"]).unwrap();
        let m = g.assignment.mapping();
        assert_eq!((m["angry"], m["furious"], m["happy"]), (0, 0, 1));
        assert!(client.transcript().records()[0].prompt.starts_with(GROUPING_PROMPT));
    }

    #[test]
    fn llm_oracle_retries_once_then_falls_back() {
        let (grouper, client) = llm_grouper(&["sorry", "still no"], None);
        let g = grouper.group_labels(&["a", "b"]).unwrap();
        assert_eq!(g.assignment.len(), 2);
        assert!(g.deviation.is_some());
        assert_eq!(client.transcript().len(), 2);
    }

    #[test]
    fn cache_prevents_repeat_oracle_calls() {
        let dir = tempfile::tempdir().unwrap();
        let (grouper, client) = llm_grouper(&["[a, b]"], Some(dir.path().to_path_buf()));
        let first = grouper.group_labels(&["b", "a", "a"]).unwrap();
        let second = grouper.group_labels(&["a", "b"]).unwrap();
        assert_eq!(first.assignment, second.assignment);
        assert_eq!(grouper.oracle_calls(), 1);
        assert_eq!(client.transcript().len(), 1);

        // A fresh grouper over the same directory reads the persisted entry.
        let (again, client2) = llm_grouper(&[], Some(dir.path().to_path_buf()));
        assert_eq!(again.group_labels(&["a", "b"]).unwrap().assignment, first.assignment);
        assert_eq!(client2.transcript().len(), 0);
    }

    #[test]
    fn concurrent_identical_requests_call_oracle_once() {
        let grouper = Grouper::lexicon(parse_lexicon("a, b").unwrap());
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| grouper.group_labels(&["a", "b", "c"]).unwrap());
            }
        });
        assert_eq!(grouper.oracle_calls(), 1);
    }
}
