//! Section extraction: conservative LLM pass, header grammar, cue voting, metadata.

use std::collections::BTreeMap;

use serde_json::Value;

use super::clean::CleanedText;
use super::rules::RuleSet;
use super::segment::{segment_with, SentenceSpan};
use crate::gateway::{ChatRequest, Gateway, ProviderError};
use crate::model::{Provenance, RawBugReport, Section, SectionKind, StructuredReport};
use crate::prompts::{fill_slots, PromptCatalog, EXTRACT_PROMPT_ID};
use crate::text::token_containment;

/// Minimum token overlap between extracted content and the source text.
pub const CONTAINMENT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ExtractError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("malformed completion: {0}")]
    MalformedCompletion(String),
    #[error("prompt {0} missing from catalog")]
    MissingPrompt(String),
}

/// Pull a JSON object out of a completion, tolerating code fences and chatter.
fn json_object(completion: &str) -> Option<&str> {
    let start = completion.find('{')?;
    let end = completion.rfind('}')?;
    (end > start).then(|| &completion[start..=end])
}

/// Parse an extraction completion into section contents.
pub fn parse_extraction(completion: &str) -> Result<BTreeMap<SectionKind, String>, ExtractError> {
    let malformed = |m: &str| ExtractError::MalformedCompletion(m.to_string());
    let body = json_object(completion).ok_or_else(|| malformed("no JSON object in completion"))?;
    let value: Value =
        serde_json::from_str(body).map_err(|e| malformed(&format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("completion is not an object"))?;
    let mut out = BTreeMap::new();
    for (key, v) in obj {
        let kind = SectionKind::parse_loose(key)
            .ok_or_else(|| malformed(&format!("unknown section key {key:?}")))?;
        match v {
            Value::Null => {}
            Value::String(s) if s.trim().is_empty() => {}
            Value::String(s) => {
                out.insert(kind, s.trim().to_string());
            }
            Value::Array(items) if kind == SectionKind::StepsToReproduce => {
                let steps: Option<Vec<&str>> = items.iter().map(Value::as_str).collect();
                let steps = steps.ok_or_else(|| malformed("steps must be strings"))?;
                if !steps.is_empty() {
                    out.insert(kind, steps.join("\n"));
                }
            }
            _ => {
                return Err(malformed(&format!(
                    "section {key} is neither a string nor null"
                )))
            }
        }
    }
    Ok(out)
}

/// Ask the model to extract sections it has explicit evidence for.
///
/// Every extracted section must be recoverable from the summary plus the
/// cleaned description (token containment of at least 0.9), otherwise the
/// whole completion is rejected.
pub fn llm_extract_sections(
    key: &str,
    summary: &str,
    description: &CleanedText,
    gateway: &Gateway,
    catalog: &PromptCatalog,
) -> Result<StructuredReport, ExtractError> {
    let mut report = StructuredReport::empty(key);
    if description.text.trim().is_empty() {
        return Ok(report);
    }
    let prompt = catalog
        .task(EXTRACT_PROMPT_ID)
        .ok_or_else(|| ExtractError::MissingPrompt(EXTRACT_PROMPT_ID.into()))?;
    let user = fill_slots(
        &prompt.body,
        &[("summary", summary), ("description", &description.text)],
    );
    let completion = gateway.chat(&ChatRequest::new(
        &prompt.prompt_id,
        &prompt.system_text,
        user,
    ))?;
    let source = format!("{summary}\n{}", description.text);
    for (kind, content) in parse_extraction(&completion)? {
        let overlap = token_containment(&content, &source);
        if overlap < CONTAINMENT_THRESHOLD {
            return Err(ExtractError::MalformedCompletion(format!(
                "{} content not found in source (overlap {overlap:.2})",
                kind.title()
            )));
        }
        report.set_section(kind, Section::new(content, Provenance::LlmExtracted));
    }
    Ok(report)
}

fn join_section(kind: SectionKind, parts: &[String]) -> String {
    let sep = if kind == SectionKind::StepsToReproduce {
        "\n"
    } else {
        " "
    };
    parts.join(sep)
}

/// Byte ranges of `text` that belong to each header block.
struct HeaderBlock {
    section: SectionKind,
    start: usize,
    content_start: usize,
    end: usize,
}

fn header_blocks(text: &str, rules: &RuleSet) -> Vec<HeaderBlock> {
    let mut blocks: Vec<HeaderBlock> = Vec::new();
    let mut offset = 0;
    for line in text.split('\n') {
        if let Some(h) = rules.match_header(line) {
            if let Some(prev) = blocks.last_mut() {
                prev.end = offset;
            }
            blocks.push(HeaderBlock {
                section: h.section,
                start: offset,
                content_start: offset + h.content_start,
                end: text.len(),
            });
        }
        offset += line.len() + 1;
    }
    blocks
}

/// Rule-based fallback: explicit headers first, then per-sentence cue voting.
///
/// Only Absent sections of `partial` are filled; text under a header for an
/// already-filled section is consumed but discarded.
pub fn heuristic_extract_sections(
    _summary: &str,
    description: &CleanedText,
    partial: &StructuredReport,
    rules: &RuleSet,
) -> StructuredReport {
    let mut report = partial.clone();
    if !report.has_absent() {
        return report;
    }
    let text = description.text.as_str();

    let blocks = header_blocks(text, rules);
    let mut by_header: BTreeMap<SectionKind, Vec<String>> = BTreeMap::new();
    for b in &blocks {
        let content = text[b.content_start.min(b.end)..b.end].trim();
        if !content.is_empty() && partial.is_absent(b.section) {
            by_header
                .entry(b.section)
                .or_default()
                .push(content.to_string());
        }
    }
    for (kind, parts) in &by_header {
        report.set_section(
            *kind,
            Section::new(parts.join("\n"), Provenance::HeaderMatched),
        );
    }

    let consumed = |s: &SentenceSpan| blocks.iter().any(|b| s.start >= b.start && s.start < b.end);
    let mut by_vote: BTreeMap<SectionKind, Vec<String>> = BTreeMap::new();
    for span in segment_with(text, &rules.protected_abbreviations) {
        if consumed(&span) {
            continue;
        }
        if let Some(kind) = rules.votes(&span.text).winner(rules.threshold) {
            if report.is_absent(kind) || by_vote.contains_key(&kind) {
                by_vote.entry(kind).or_default().push(span.text);
            }
        }
    }
    for (kind, parts) in &by_vote {
        report.set_section(
            *kind,
            Section::new(join_section(*kind, parts), Provenance::HeuristicClassified),
        );
    }
    report
}

/// Metadata lines appended to Environment: "Affects: …" and "Priority: …".
pub fn metadata_lines(raw: &RawBugReport) -> Option<String> {
    let mut lines = Vec::new();
    if !raw.affected_versions.is_empty() {
        lines.push(format!("Affects: {}", raw.affected_versions.join(", ")));
    }
    if let Some(p) = raw.priority.as_deref().filter(|p| !p.trim().is_empty()) {
        lines.push(format!("Priority: {}", p.trim()));
    }
    (!lines.is_empty()).then(|| lines.join("\n"))
}

/// `content` without the metadata suffix that [`enrich_metadata`] appended.
pub fn strip_metadata<'a>(content: &'a str, raw: &RawBugReport) -> &'a str {
    match metadata_lines(raw) {
        Some(lines) => content
            .strip_suffix(lines.as_str())
            .map(|rest| rest.strip_suffix('\n').unwrap_or(rest))
            .unwrap_or(content),
        None => content,
    }
}

/// Append tracker metadata to the Environment section.
pub fn enrich_metadata(mut report: StructuredReport, raw: &RawBugReport) -> StructuredReport {
    let Some(lines) = metadata_lines(raw) else {
        return report;
    };
    let env = SectionKind::Environment;
    let section = if report.is_absent(env) {
        Section::new(lines, Provenance::MetadataEnriched)
    } else {
        let current = report.section(env).cloned().unwrap_or_else(Section::absent);
        Section::new(format!("{}\n{lines}", current.content), current.provenance)
    };
    report.set_section(env, section);
    report
}
