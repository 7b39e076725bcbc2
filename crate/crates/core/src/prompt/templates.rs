use std::collections::BTreeMap;
use std::path::Path;

use super::PromptError;

const BUILTIN: &[(&str, &str)] = &[
    ("stage1_video_clue", include_str!("../../templates/stage1_video_clue.txt")),
    ("stage1_audio_clue", include_str!("../../templates/stage1_audio_clue.txt")),
    ("stage1_video_objective", include_str!("../../templates/stage1_video_objective.txt")),
    ("stage1_audio_objective", include_str!("../../templates/stage1_audio_objective.txt")),
    ("stage2_std", include_str!("../../templates/stage2_std.txt")),
    ("stage2_handcrafted_zero_shot", include_str!("../../templates/stage2_handcrafted_zero_shot.txt")),
    ("stage2_handcrafted_few_shot", include_str!("../../templates/stage2_handcrafted_few_shot.txt")),
    ("stage2_multipersona", include_str!("../../templates/stage2_multipersona.txt")),
    ("fewshot_exemplars", include_str!("../../templates/fewshot_exemplars.txt")),
    ("one_stage", include_str!("../../templates/one_stage.txt")),
    ("sc_select", include_str!("../../templates/sc_select.txt")),
    ("refine_critique", include_str!("../../templates/refine_critique.txt")),
    ("refine_revise", include_str!("../../templates/refine_revise.txt")),
    ("l2m_decompose", include_str!("../../templates/l2m_decompose.txt")),
    ("l2m_solve", include_str!("../../templates/l2m_solve.txt")),
    ("l2m_synthesize", include_str!("../../templates/l2m_synthesize.txt")),
];

/// Named prompt templates with `{slot}` placeholders. `{{` and `}}` render
/// as literal braces.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateStore {
    templates: BTreeMap<String, String>,
}

impl Default for TemplateStore {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateStore {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// Builtins overlaid with every `*.txt` file in `dir` (id = file stem).
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let mut store = Self::builtin();
        let dir = dir.as_ref();
        let entries = std::fs::read_dir(dir).map_err(|e| PromptError::Template(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| PromptError::Template(e.to_string()))?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
                store.templates.insert(id, text);
            }
        }
        store.check()?;
        Ok(store)
    }

    pub fn insert(&mut self, id: impl Into<String>, text: impl Into<String>) {
        self.templates.insert(id.into(), text.into());
    }

    pub fn get(&self, id: &str) -> Result<&str, PromptError> {
        self.templates
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| PromptError::Template(format!("no template `{id}`")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Checks that every builtin id is present and the few-shot template
    /// carries at least one exemplar.
    pub fn check(&self) -> Result<(), PromptError> {
        for (id, _) in BUILTIN {
            self.get(id)?;
        }
        if !self.get("stage2_handcrafted_few_shot")?.contains("{exemplars}") {
            return Err(PromptError::Template("few-shot template lacks an {exemplars} slot".into()));
        }
        if self.get("fewshot_exemplars")?.trim().is_empty() {
            return Err(PromptError::Template("fewshot_exemplars is empty".into()));
        }
        Ok(())
    }

    pub fn render(&self, id: &str, slots: &[(&str, &str)]) -> Result<String, PromptError> {
        render_template(self.get(id)?, slots).map_err(|slot| PromptError::Template(format!("template `{id}` uses unknown slot {{{slot}}}")))
    }
}

/// Single-pass substitution; slot values are never re-expanded. Returns the
/// name of the first slot without a value.
pub fn render_template(template: &str, slots: &[(&str, &str)]) -> Result<String, String> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") {
            out.push('{');
            rest = &tail[2..];
            continue;
        }
        if tail.starts_with("}}") {
            out.push('}');
            rest = &tail[2..];
            continue;
        }
        if tail.starts_with('{') {
            if let Some(end) = tail.find('}') {
                let name = &tail[1..end];
                if !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') {
                    match slots.iter().find(|(k, _)| *k == name) {
                        Some((_, v)) => out.push_str(v),
                        None => return Err(name.to_string()),
                    }
                    rest = &tail[end + 1..];
                    continue;
                }
            }
        }
        out.push_str(&tail[..1]);
        rest = &tail[1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_slots_once_and_escapes() {
        let out = render_template("a {x} b {{y}} {z}", &[("x", "{z}"), ("z", "Z")]).unwrap();
        assert_eq!(out, "a {z} b {y} Z");
        assert_eq!(render_template("{missing}", &[]), Err("missing".to_string()));
        assert_eq!(render_template("{ not a slot } }", &[]).unwrap(), "{ not a slot } }");
    }

    #[test]
    fn builtin_store_is_complete() {
        TemplateStore::builtin().check().unwrap();
    }

    #[test]
    fn directory_overlay_replaces_builtins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("stage2_std.txt"), "{context}{scene}\nCUSTOM as a list").unwrap();
        let store = TemplateStore::load_dir(dir.path()).unwrap();
        assert!(store.get("stage2_std").unwrap().contains("CUSTOM"));
        assert!(store.get("stage1_video_clue").is_ok());

        std::fs::write(dir.path().join("stage2_handcrafted_few_shot.txt"), "no exemplars").unwrap();
        assert!(TemplateStore::load_dir(dir.path()).is_err());
    }
}
