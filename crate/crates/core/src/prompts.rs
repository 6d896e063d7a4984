//! Prompt catalog: task prompts for extraction, analysis and query generation,
//! plus the section-specific improvement templates.
//!
//! Each catalog file is TOML front matter between `---` lines followed by a
//! body containing `{{slot}}` placeholders. A built-in catalog is compiled in;
//! a directory of files with the same layout overrides entries by prompt id.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{IssueClass, SectionKind};

pub const EXTRACT_PROMPT_ID: &str = "preprocess.extract.v1";
pub const ANALYZE_PROMPT_ID: &str = "detect.analyze.v1";
pub const QUERYGEN_PROMPT_ID: &str = "rag.querygen.v1";

/// Slots every improvement template body carries exactly once.
pub const TEMPLATE_SLOTS: [&str; 3] =
    ["report_context", "detector_findings", "retrieved_knowledge"];

const BUILTIN: &[(&str, &str)] = &[
    (
        "preprocess_extract.md",
        include_str!("../prompts/preprocess_extract.md"),
    ),
    (
        "detect_analyze.md",
        include_str!("../prompts/detect_analyze.md"),
    ),
    (
        "rag_querygen.md",
        include_str!("../prompts/rag_querygen.md"),
    ),
    (
        "improve_s2r_missing.md",
        include_str!("../prompts/improve_s2r_missing.md"),
    ),
    (
        "improve_s2r_incomplete.md",
        include_str!("../prompts/improve_s2r_incomplete.md"),
    ),
    (
        "improve_s2r_ambiguous.md",
        include_str!("../prompts/improve_s2r_ambiguous.md"),
    ),
    (
        "improve_s2r_enhance.md",
        include_str!("../prompts/improve_s2r_enhance.md"),
    ),
    (
        "improve_ob_missing.md",
        include_str!("../prompts/improve_ob_missing.md"),
    ),
    (
        "improve_ob_incomplete.md",
        include_str!("../prompts/improve_ob_incomplete.md"),
    ),
    (
        "improve_ob_ambiguous.md",
        include_str!("../prompts/improve_ob_ambiguous.md"),
    ),
    (
        "improve_ob_enhance.md",
        include_str!("../prompts/improve_ob_enhance.md"),
    ),
    (
        "improve_eb_missing.md",
        include_str!("../prompts/improve_eb_missing.md"),
    ),
    (
        "improve_eb_incomplete.md",
        include_str!("../prompts/improve_eb_incomplete.md"),
    ),
    (
        "improve_eb_ambiguous.md",
        include_str!("../prompts/improve_eb_ambiguous.md"),
    ),
    (
        "improve_eb_enhance.md",
        include_str!("../prompts/improve_eb_enhance.md"),
    ),
];

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("{file}: missing front matter delimited by --- lines")]
    NoFrontMatter { file: String },
    #[error("{file}: {source}")]
    FrontMatter {
        file: String,
        source: toml::de::Error,
    },
    #[error("{file}: {message}")]
    Invalid { file: String, message: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotPair {
    pub bad_example: String,
    pub good_example: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub prompt_id: String,
    pub section: SectionKind,
    pub issue_class: IssueClass,
    pub system_text: String,
    pub few_shot_pairs: Vec<FewShotPair>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPrompt {
    pub prompt_id: String,
    pub system_text: String,
    pub body: String,
}

#[derive(Debug, Deserialize)]
struct FrontMatter {
    #[serde(default)]
    kind: Option<String>,
    prompt_id: String,
    #[serde(default)]
    section: Option<SectionKind>,
    #[serde(default)]
    issue_class: Option<IssueClass>,
    system_text: String,
    #[serde(default)]
    few_shot: Vec<RawPair>,
}

#[derive(Debug, Deserialize)]
struct RawPair {
    bad: String,
    good: String,
}

fn slot_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z0-9_]+)\s*\}\}").unwrap())
}

/// Names of `{{slot}}` placeholders in order of appearance.
pub fn slot_names(body: &str) -> Vec<String> {
    slot_regex()
        .captures_iter(body)
        .map(|c| c[1].to_string())
        .collect()
}

/// Replace each `{{name}}` with its value; unknown slots are left untouched.
pub fn fill_slots(body: &str, values: &[(&str, &str)]) -> String {
    slot_regex()
        .replace_all(body, |caps: &regex::Captures<'_>| {
            values
                .iter()
                .find(|(k, _)| *k == &caps[1])
                .map(|(_, v)| v.to_string())
                .unwrap_or_else(|| caps[0].to_string())
        })
        .into_owned()
}

enum Entry {
    Task(TaskPrompt),
    Template(PromptTemplate),
}

fn parse_file(file: &str, text: &str) -> Result<Entry, CatalogError> {
    let text = text.replace("\r\n", "\n");
    let rest = text
        .strip_prefix("---\n")
        .ok_or_else(|| CatalogError::NoFrontMatter { file: file.into() })?;
    let end = rest
        .find("\n---\n")
        .ok_or_else(|| CatalogError::NoFrontMatter { file: file.into() })?;
    let fm: FrontMatter =
        toml::from_str(&rest[..end]).map_err(|source| CatalogError::FrontMatter {
            file: file.into(),
            source,
        })?;
    let body = rest[end + 5..].trim().to_string();
    let invalid = |message: String| CatalogError::Invalid {
        file: file.into(),
        message,
    };
    let system_text = fm.system_text.trim().to_string();

    if fm.kind.as_deref() == Some("task") {
        return Ok(Entry::Task(TaskPrompt {
            prompt_id: fm.prompt_id,
            system_text,
            body,
        }));
    }
    let section = fm
        .section
        .ok_or_else(|| invalid("template without section".into()))?;
    let issue_class = fm
        .issue_class
        .ok_or_else(|| invalid("template without issue_class".into()))?;
    if fm.few_shot.is_empty() {
        return Err(invalid(format!("{} has no few-shot pairs", fm.prompt_id)));
    }
    let slots = slot_names(&body);
    for name in TEMPLATE_SLOTS {
        let n = slots.iter().filter(|s| *s == name).count();
        if n != 1 {
            return Err(invalid(format!(
                "slot {name} appears {n} times in {}",
                fm.prompt_id
            )));
        }
    }
    if let Some(extra) = slots.iter().find(|s| !TEMPLATE_SLOTS.contains(&s.as_str())) {
        return Err(invalid(format!("unknown slot {extra} in {}", fm.prompt_id)));
    }
    Ok(Entry::Template(PromptTemplate {
        prompt_id: fm.prompt_id,
        section,
        issue_class,
        system_text,
        few_shot_pairs: fm
            .few_shot
            .into_iter()
            .map(|p| FewShotPair {
                bad_example: p.bad,
                good_example: p.good,
            })
            .collect(),
        body,
    }))
}

#[derive(Debug, Clone, Default)]
pub struct PromptCatalog {
    tasks: BTreeMap<String, TaskPrompt>,
    templates: BTreeMap<(SectionKind, IssueClass), PromptTemplate>,
}

impl PromptCatalog {
    /// The compiled-in catalog.
    pub fn builtin() -> Self {
        let mut catalog = PromptCatalog::default();
        for (name, text) in BUILTIN {
            catalog.insert(parse_file(name, text).expect("built-in prompt parses"));
        }
        catalog
    }

    /// Built-in catalog overlaid with every `*.md` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, CatalogError> {
        let mut catalog = Self::builtin();
        let io = |source| CatalogError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "md"))
            .collect();
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|source| CatalogError::Io {
                path: path.display().to_string(),
                source,
            })?;
            catalog.insert(parse_file(&path.display().to_string(), &text)?);
        }
        Ok(catalog)
    }

    fn insert(&mut self, entry: Entry) {
        match entry {
            Entry::Task(t) => {
                self.tasks.insert(t.prompt_id.clone(), t);
            }
            Entry::Template(t) => {
                self.templates.insert((t.section, t.issue_class), t);
            }
        }
    }

    pub fn task(&self, prompt_id: &str) -> Option<&TaskPrompt> {
        self.tasks.get(prompt_id)
    }

    pub fn template(
        &self,
        section: SectionKind,
        issue_class: IssueClass,
    ) -> Option<&PromptTemplate> {
        self.templates.get(&(section, issue_class))
    }

    pub fn templates(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    /// Drop a template (used to exercise catalog gaps).
    pub fn remove_template(
        &mut self,
        section: SectionKind,
        issue_class: IssueClass,
    ) -> Option<PromptTemplate> {
        self.templates.remove(&(section, issue_class))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalog_covers_every_combination() {
        let c = PromptCatalog::builtin();
        for s in SectionKind::REQUIRED {
            for k in IssueClass::ALL {
                let t = c
                    .template(s, k)
                    .unwrap_or_else(|| panic!("no template for {s}/{k}"));
                assert!(!t.few_shot_pairs.is_empty());
                assert_eq!(slot_names(&t.body).len(), 3);
            }
        }
        for id in [EXTRACT_PROMPT_ID, ANALYZE_PROMPT_ID, QUERYGEN_PROMPT_ID] {
            assert!(c.task(id).is_some(), "{id}");
        }
    }

    #[test]
    fn repeated_slot_is_rejected() {
        let text = "---\nprompt_id = \"x\"\nsection = \"observed_behavior\"\nissue_class = \"missing\"\nsystem_text = \"s\"\n[[few_shot]]\nbad = \"b\"\ngood = \"g\"\n---\n{{report_context}} {{report_context}} {{detector_findings}} {{retrieved_knowledge}}\n";
        let err = parse_file("x.md", text).err().unwrap();
        assert!(
            err.to_string().contains("report_context appears 2 times"),
            "{err}"
        );
    }

    #[test]
    fn template_without_examples_is_rejected() {
        let text = "---\nprompt_id = \"x\"\nsection = \"observed_behavior\"\nissue_class = \"missing\"\nsystem_text = \"s\"\n---\n{{report_context}} {{detector_findings}} {{retrieved_knowledge}}\n";
        assert!(parse_file("x.md", text).is_err());
    }

    #[test]
    fn directory_overrides_builtin() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("q.md"),
            "---\nkind = \"task\"\nprompt_id = \"rag.querygen.v1\"\nsystem_text = \"custom\"\n---\n{{summary}}\n",
        )
        .unwrap();
        let c = PromptCatalog::load_dir(dir.path()).unwrap();
        assert_eq!(c.task(QUERYGEN_PROMPT_ID).unwrap().system_text, "custom");
        assert!(c.task(EXTRACT_PROMPT_ID).is_some());
    }

    #[test]
    fn fill_slots_replaces_known_names_only() {
        assert_eq!(
            fill_slots("a {{x}} b {{ y }} {{z}}", &[("x", "1"), ("y", "2")]),
            "a 1 b 2 {{z}}"
        );
    }
}
