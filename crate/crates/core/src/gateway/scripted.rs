//! Deterministic offline backend.
//!
//! Answers each prompt family with simple rules over the prompt text, embeds
//! by signed feature hashing and reranks by token overlap. It stands in for a
//! live model when recording fixtures and in tests; its answers are plausible,
//! not good.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{lexical, Backend, BackendError, ChatRequest};
use crate::model::{parse_steps, SectionKind};
use crate::preprocess::RuleSet;
use crate::prompts::{ANALYZE_PROMPT_ID, EXTRACT_PROMPT_ID, QUERYGEN_PROMPT_ID};
use crate::text::{is_substantive, tokens};

const VAGUE_WORDS: [&str; 6] = [
    "somehow",
    "something",
    "sometimes",
    "random",
    "randomly",
    "stuff",
];
const STOPWORDS: [&str; 24] = [
    "the", "and", "that", "this", "with", "from", "when", "then", "there", "they", "have", "into",
    "will", "would", "should", "does", "doesn", "just", "your", "what", "after", "while", "which",
    "being",
];

pub struct ScriptedBackend {
    dim: usize,
    rules: RuleSet,
}

impl ScriptedBackend {
    pub fn new(dim: usize) -> Self {
        ScriptedBackend {
            dim,
            rules: RuleSet::default(),
        }
    }
}

impl Backend for ScriptedBackend {
    fn chat(&self, _model: &str, request: &ChatRequest) -> Result<String, BackendError> {
        let user = request.user_text.as_str();
        match request.prompt_id.as_str() {
            EXTRACT_PROMPT_ID => Ok(self.extract(user)),
            ANALYZE_PROMPT_ID => Ok(analyze(user)),
            QUERYGEN_PROMPT_ID => Ok(queries(user)),
            id if id.starts_with("improve.") => {
                let section = id
                    .split('.')
                    .nth(1)
                    .and_then(SectionKind::parse_loose)
                    .ok_or_else(|| {
                        BackendError::Protocol(format!(
                            "scripted backend cannot tell the section of {id}"
                        ))
                    })?;
                Ok(improve(section, user))
            }
            id => Err(BackendError::Protocol(format!(
                "scripted backend has no rule for prompt {id}"
            ))),
        }
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts
            .iter()
            .map(|t| hashed_embedding(t, self.dim))
            .collect())
    }

    fn rerank(
        &self,
        _model: &str,
        query: &str,
        candidates: &[String],
    ) -> Result<Vec<f64>, BackendError> {
        Ok(lexical::score_all(query, candidates))
    }
}

/// Signed feature hashing of tokens, L2-normalized. Empty text maps to the
/// first basis vector so every embedding has unit length.
pub fn hashed_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for t in tokens(text) {
        let h = Sha256::digest(t.as_bytes());
        let bucket = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) as usize % dim;
        v[bucket] += if h[8] & 1 == 0 { 1.0 } else { -1.0 };
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Text after the last line equal to `label`, up to the next line in `stops`.
fn block_after<'a>(text: &'a str, label: &str, stops: &[&str]) -> &'a str {
    let Some(pos) = text.rfind(label) else {
        return "";
    };
    let rest = &text[pos + label.len()..];
    let end = stops
        .iter()
        .filter_map(|s| rest.find(s))
        .min()
        .unwrap_or(rest.len());
    rest[..end].trim()
}

fn line_value<'a>(text: &'a str, prefix: &str) -> &'a str {
    text.lines()
        .rev()
        .find_map(|l| l.strip_prefix(prefix))
        .unwrap_or("")
        .trim()
}

impl ScriptedBackend {
    /// Copy the content under explicit headers, verbatim.
    fn extract(&self, user: &str) -> String {
        let description = block_after(user, "\nDescription:\n", &[]);
        let mut found: BTreeMap<SectionKind, Vec<&str>> = BTreeMap::new();
        let mut current = None;
        for line in description.lines() {
            if let Some(m) = self.rules.match_header(line) {
                current = Some(m.section);
                let rest = line[m.content_start..].trim();
                let entry = found.entry(m.section).or_default();
                if !rest.is_empty() {
                    entry.push(rest);
                }
            } else if let Some(kind) = current {
                if !line.trim().is_empty() {
                    found.entry(kind).or_default().push(line.trim());
                }
            }
        }
        let mut obj = serde_json::Map::new();
        for kind in SectionKind::ALL {
            let value = match found.get(&kind) {
                Some(lines) if !lines.is_empty() => serde_json::Value::String(lines.join("\n")),
                _ => serde_json::Value::Null,
            };
            obj.insert(snake(kind).into(), value);
        }
        serde_json::Value::Object(obj).to_string()
    }
}

fn snake(kind: SectionKind) -> &'static str {
    match kind {
        SectionKind::StepsToReproduce => "steps_to_reproduce",
        SectionKind::Environment => "environment",
        SectionKind::ObservedBehavior => "observed_behavior",
        SectionKind::ExpectedBehavior => "expected_behavior",
    }
}

/// Sections of a report rendered as `Title:\n content` blocks.
fn rendered_sections(text: &str) -> BTreeMap<SectionKind, String> {
    let mut out = BTreeMap::new();
    let mut current: Option<SectionKind> = None;
    for line in text.lines() {
        let heading = line
            .strip_suffix(':')
            .and_then(|h| SectionKind::ALL.into_iter().find(|k| k.title() == h));
        if let Some(kind) = heading {
            current = Some(kind);
            out.insert(kind, String::new());
        } else if let Some(kind) = current {
            let s: &mut String = out.get_mut(&kind).expect("inserted on heading");
            if !line.trim().is_empty() {
                if !s.is_empty() {
                    s.push('\n');
                }
                s.push_str(line.trim());
            }
        }
    }
    out
}

fn analyze(user: &str) -> String {
    let report = block_after(user, "Bug report:\n", &[]);
    let sections = rendered_sections(report);
    let mut findings = Vec::new();
    let mut recommendations = Vec::new();
    for kind in SectionKind::REQUIRED {
        let abbr = kind.abbreviation();
        let content = sections.get(&kind).map(String::as_str).unwrap_or("");
        let words = tokens(content);
        if !is_substantive(content) {
            findings.push(format!(
                "{abbr} | missing | the report does not describe the {}",
                kind.title().to_lowercase()
            ));
            recommendations.push(format!("Add a {} section.", kind.title()));
        } else if kind == SectionKind::StepsToReproduce && parse_steps(content).len() < 2 {
            findings.push(format!("{abbr} | incomplete | only one step is given"));
            recommendations
                .push("List every action needed to reach the problem, one per line.".into());
        } else if words.iter().any(|w| VAGUE_WORDS.contains(&w.as_str())) {
            findings.push(format!("{abbr} | ambiguous | the wording is vague"));
            recommendations.push(format!(
                "Replace vague wording in the {} section with concrete detail.",
                kind.title()
            ));
        } else if kind != SectionKind::StepsToReproduce && words.len() < 6 {
            findings.push(format!(
                "{abbr} | incomplete | the description is very short"
            ));
        }
    }
    if findings.is_empty() {
        return "NONE".into();
    }
    findings.extend(
        recommendations
            .into_iter()
            .map(|r| format!("RECOMMENDATION: {r}")),
    );
    findings.join("\n")
}

/// Content words of `text` by descending frequency, then first appearance.
fn keywords(text: &str, n: usize) -> Vec<String> {
    let mut counts: Vec<(String, usize, usize)> = Vec::new();
    for (pos, t) in tokens(text).into_iter().enumerate() {
        if t.len() < 4 || STOPWORDS.contains(&t.as_str()) || t.chars().all(|c| c.is_ascii_digit()) {
            continue;
        }
        match counts.iter_mut().find(|(w, _, _)| *w == t) {
            Some(e) => e.1 += 1,
            None => counts.push((t, 1, pos)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    counts.into_iter().take(n).map(|(w, _, _)| w).collect()
}

fn queries(user: &str) -> String {
    let summary = line_value(user, "Summary: ");
    let description = block_after(user, "\nDescription:\n", &[]);
    let mut out = Vec::new();
    if !summary.is_empty() {
        out.push(summary.to_string());
    }
    let words = keywords(&format!("{summary}\n{description}"), 6);
    for pair in words.chunks(2) {
        out.push(pair.join(" "));
    }
    if out.is_empty() {
        out.push("game mechanics".into());
    }
    out.truncate(3);
    serde_json::to_string(&out).expect("strings serialize")
}

fn first_sentence(text: &str) -> &str {
    let t = text.trim();
    let end = t.find(['.', '!', '?', '\n']).map_or(t.len(), |i| i + 1);
    t[..end].trim_end_matches(['\n'])
}

fn improve(section: SectionKind, user: &str) -> String {
    let summary = line_value(user, "Summary: ");
    let stops = [
        "\n\n### ",
        "\n\nSteps to Reproduce:",
        "\n\nEnvironment:",
        "\n\nObserved Behavior:",
        "\n\nExpected Behavior:",
    ];
    let current = block_after(
        user,
        &format!("### Current {}\n", section.title().to_lowercase()),
        &stops[..1],
    );
    let other = |k: SectionKind| {
        if k == section {
            ""
        } else {
            block_after(user, &format!("\n\n{}:\n", k.title()), &stops)
        }
    };
    let environment = other(SectionKind::Environment);
    let observed = other(SectionKind::ObservedBehavior);
    let topic = {
        let knowledge = block_after(user, "### Retrieved knowledge\n\n[1] ", &["\n"]);
        if knowledge.is_empty() {
            keywords(summary, 1).pop().unwrap_or_else(|| "game".into())
        } else {
            knowledge.to_string()
        }
    };
    let subject = if summary.is_empty() {
        "the affected feature".to_string()
    } else {
        summary.trim_end_matches('.').to_string()
    };
    match section {
        SectionKind::StepsToReproduce => {
            let mut steps: Vec<String> = parse_steps(current);
            let start = if environment.is_empty() {
                "Start the game and open a world.".to_string()
            } else {
                format!(
                    "Start the game ({}) and open a world.",
                    environment
                        .lines()
                        .next()
                        .unwrap_or("")
                        .trim_end_matches('.')
                )
            };
            if steps.is_empty() {
                steps.push(start);
                steps.push(format!("Set up the situation involving the {topic}."));
            } else if steps.len() < 2 {
                steps.insert(0, start);
            }
            let observe = if observed.is_empty() {
                format!("Observe the result: {subject}.")
            } else {
                format!("Observe: {}", first_sentence(observed))
            };
            steps.push(observe);
            steps
                .iter()
                .enumerate()
                .map(|(i, s)| format!("{}. {}", i + 1, s))
                .collect::<Vec<_>>()
                .join("\n")
        }
        SectionKind::ObservedBehavior => {
            if is_substantive(current) {
                format!(
                    "{} This happens every time the steps are followed.",
                    current.trim()
                )
            } else {
                format!("{subject}. The problem occurs every time the steps are followed.")
            }
        }
        SectionKind::ExpectedBehavior => {
            if is_substantive(current) {
                format!(
                    "{} The {topic} should behave as the game documents it.",
                    current.trim()
                )
            } else {
                format!(
                    "The {topic} should work normally instead: {}.",
                    subject.to_lowercase()
                )
            }
        }
        SectionKind::Environment => environment.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::parse_analysis;
    use crate::model::IssueClass;
    use crate::preprocess::parse_extraction;
    use crate::rag::parse_queries;

    fn chat(prompt_id: &str, user: &str) -> String {
        ScriptedBackend::new(8)
            .chat("m", &ChatRequest::new(prompt_id, "s", user))
            .unwrap()
    }

    #[test]
    fn extraction_copies_header_content() {
        let user = "Example input:\nDescription: Observed behavior: x\n\nNow the report.\nSummary: Hopper bug\nDescription:\nSteps to Reproduce:\n1. Place hopper\n2. Wait\nExpected result: items move";
        let parsed = parse_extraction(&chat(EXTRACT_PROMPT_ID, user)).unwrap();
        assert_eq!(
            parsed[&SectionKind::StepsToReproduce],
            "1. Place hopper\n2. Wait"
        );
        assert_eq!(parsed[&SectionKind::ExpectedBehavior], "items move");
        assert!(!parsed.contains_key(&SectionKind::ObservedBehavior));
    }

    #[test]
    fn analysis_flags_missing_and_short_sections() {
        let user = "Earlier automated checks:\nx\n\nBug report:\nSummary: s\n\nSteps to Reproduce:\n1. Place a hopper somehow\n\nObserved Behavior:\nThe hopper stays empty all the time";
        let a = parse_analysis(&chat(ANALYZE_PROMPT_ID, user)).unwrap();
        let classes: Vec<(SectionKind, IssueClass)> =
            a.flags.iter().map(|f| (f.section, f.issue_class)).collect();
        assert_eq!(
            classes,
            [
                (SectionKind::StepsToReproduce, IssueClass::Incomplete),
                (SectionKind::ExpectedBehavior, IssueClass::Missing)
            ]
        );
        assert_eq!(a.recommendations.len(), 2);
        let clean = "Bug report:\nSteps to Reproduce:\n1. Place a chest\n2. Add a hopper\n\nObserved Behavior:\nThe hopper stays empty all the time\n\nExpected Behavior:\nItems move from the chest into it";
        assert_eq!(chat(ANALYZE_PROMPT_ID, clean), "NONE");
    }

    #[test]
    fn queries_are_a_json_array() {
        let q = parse_queries(&chat(QUERYGEN_PROMPT_ID, "Summary: Hopper ignores chest\nDescription:\nThe hopper under the chest never pulls items from the chest")).unwrap();
        assert_eq!(q[0], "Hopper ignores chest");
        assert_eq!(q[1], "chest hopper");
        assert!(q.len() <= 3);
    }

    #[test]
    fn improved_steps_are_enumerated() {
        let user = "Write the Steps.\n\n### Bug report\nSummary: Hopper ignores chest\n\nEnvironment:\nAffects: 1.21.4\n\nObserved Behavior:\nThe hopper stays empty. Always.\n\n### Retrieved knowledge\n\n[1] Hopper\ntext";
        let out = chat("improve.s2r.missing.v1", user);
        assert_eq!(
            out,
            "1. Start the game (Affects: 1.21.4) and open a world.\n2. Set up the situation involving the Hopper.\n3. Observe: The hopper stays empty."
        );
        let eb = chat("improve.eb.missing.v1", user);
        assert_eq!(
            eb,
            "The Hopper should work normally instead: hopper ignores chest."
        );
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let v = hashed_embedding("hopper chest hopper", 16);
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(v, hashed_embedding("Hopper, chest; hopper", 16));
        assert_eq!(hashed_embedding("", 4), [1.0, 0.0, 0.0, 0.0]);
    }
}
