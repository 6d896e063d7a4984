//! Report cleaning and four-section extraction.
//!
//! The pipeline is clean → LLM extraction → rule fallback for sections still
//! Absent → metadata enrichment of Environment.

pub mod clean;
pub mod extract;
pub mod rules;
pub mod segment;

use serde::{Deserialize, Serialize};

pub use clean::{clean_text, CleanedText, RemovedKind, RemovedSpan};
pub use extract::{
    enrich_metadata, heuristic_extract_sections, llm_extract_sections, metadata_lines,
    parse_extraction, strip_metadata, ExtractError, CONTAINMENT_THRESHOLD,
};
pub use rules::{RuleSet, RulesError, Votes};
pub use segment::{segment_sentences, segment_with, SentenceSpan};

use crate::gateway::Gateway;
use crate::model::{RawBugReport, SectionKind, StructuredReport};
use crate::prompts::PromptCatalog;
use crate::text::token_containment;

/// Cue votes for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicSignal {
    pub sentence: SentenceSpan,
    #[serde(flatten)]
    pub votes: Votes,
}

/// Segment `cleaned` and score every sentence.
pub fn heuristic_signals(cleaned: &CleanedText, rules: &RuleSet) -> Vec<HeuristicSignal> {
    segment_with(&cleaned.text, &rules.protected_abbreviations)
        .into_iter()
        .map(|sentence| {
            let votes = rules.votes(&sentence.text);
            HeuristicSignal { sentence, votes }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOutput {
    pub report: StructuredReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Set when extraction failed and the rule fallback found nothing either.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Extracted sections whose content cannot be traced back to the source text.
/// Metadata appended by enrichment is not part of the check.
pub fn untraceable_sections(report: &StructuredReport, raw: &RawBugReport) -> Vec<SectionKind> {
    let source = format!("{}\n{}", report.summary, report.source_text);
    report
        .sections
        .iter()
        .filter(|(_, s)| s.provenance.is_extracted())
        .filter(|(_, s)| {
            token_containment(strip_metadata(&s.content, raw), &source) < CONTAINMENT_THRESHOLD
        })
        .map(|(k, _)| *k)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub rules: RuleSet,
    pub catalog: PromptCatalog,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Preprocessor {
            rules: RuleSet::default(),
            catalog: PromptCatalog::builtin(),
        }
    }
}

impl Preprocessor {
    pub fn new(rules: RuleSet, catalog: PromptCatalog) -> Self {
        Preprocessor { rules, catalog }
    }

    /// Run the full pipeline on one report. Never drops the report.
    pub fn run(&self, raw: &RawBugReport, gateway: &Gateway) -> PreprocessOutput {
        let summary = clean_text(&raw.summary).text;
        let description = clean_text(&raw.description);
        let mut warnings = Vec::new();

        let llm = llm_extract_sections(&raw.key, &summary, &description, gateway, &self.catalog);
        let (partial, llm_error) = match llm {
            Ok(r) => (r, None),
            Err(e) => {
                warnings.push(format!("{}: LLM extraction failed: {e}", raw.key));
                (StructuredReport::empty(&raw.key), Some(e))
            }
        };
        let mut report = heuristic_extract_sections(&summary, &description, &partial, &self.rules);
        let mut error = None;
        if let Some(e) = llm_error {
            if !report.sections.values().any(|s| !s.is_absent())
                && matches!(e, ExtractError::Provider(_))
            {
                error = Some(e.to_string());
            }
        }
        report = enrich_metadata(report, raw);
        report.summary = summary;
        report.source_text = description.text;
        PreprocessOutput {
            report,
            warnings,
            error,
        }
    }
}

/// Preprocess with the default rules and built-in prompts.
pub fn preprocess_report(raw: &RawBugReport, gateway: &Gateway) -> PreprocessOutput {
    Preprocessor::default().run(raw, gateway)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Provenance, Section};
    use chrono::DateTime;

    fn raw(description: &str) -> RawBugReport {
        let t = DateTime::from_timestamp(1_740_000_000, 0).unwrap();
        RawBugReport {
            key: "MC-5".into(),
            summary: "Boat sinks".into(),
            description: description.into(),
            created: t,
            updated: t,
            status: "Resolved".into(),
            resolution: None,
            comments: vec![],
            affected_versions: vec!["1.21.4".into()],
            priority: Some("Normal".into()),
            issue_links: vec![],
        }
    }

    #[test]
    fn enriched_environment_stays_traceable() {
        let r = raw("Environment:\nWindows 11 laptop");
        let mut report = StructuredReport::empty("MC-5");
        report.summary = r.summary.clone();
        report.source_text = r.description.clone();
        report.set_section(
            SectionKind::Environment,
            Section::new("Windows 11 laptop", Provenance::HeaderMatched),
        );
        let report = enrich_metadata(report, &r);
        assert_eq!(
            report.content(SectionKind::Environment),
            "Windows 11 laptop\nAffects: 1.21.4\nPriority: Normal"
        );
        assert!(untraceable_sections(&report, &r).is_empty());
    }

    #[test]
    fn invented_content_is_untraceable() {
        let r = raw("The boat sinks.");
        let mut report = StructuredReport::empty("MC-5");
        report.source_text = r.description.clone();
        report.set_section(
            SectionKind::ExpectedBehavior,
            Section::new("The boat should float on lava", Provenance::LlmExtracted),
        );
        assert_eq!(
            untraceable_sections(&report, &r),
            vec![SectionKind::ExpectedBehavior]
        );
    }

    #[test]
    fn strip_metadata_leaves_foreign_text_alone() {
        let r = raw("");
        assert_eq!(
            strip_metadata("Linux\nAffects: 1.21.4\nPriority: Normal", &r),
            "Linux"
        );
        assert_eq!(strip_metadata("Affects: 1.21.4\nPriority: Normal", &r), "");
        assert_eq!(strip_metadata("Linux only", &r), "Linux only");
    }
}
