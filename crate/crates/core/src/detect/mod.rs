//! Quality detection: classifier filter, structural heuristics, gated LLM analysis.

pub mod classifier;

use serde::{Deserialize, Serialize};

pub use classifier::{
    train_classifier, ClassifierError, ClassifierModel, LabeledExample, ModelMetadata,
    QualityLabel, TrainConfig,
};

use crate::gateway::{ChatRequest, Gateway, ProviderError};
use crate::model::{
    merge_flags, DetectionResult, FlagSource, IssueClass, IssueFlag, SectionKind, StructuredReport,
    Verdict,
};
use crate::prompts::{fill_slots, PromptCatalog, ANALYZE_PROMPT_ID};
use crate::text::{is_substantive, MIN_SUBSTANCE_TOKENS};

/// Text the classifier sees: summary plus cleaned description, falling back
/// to the section contents when no source text is attached.
pub fn classifier_text(report: &StructuredReport) -> String {
    let body = if report.source_text.trim().is_empty() {
        report.render()
    } else {
        report.source_text.clone()
    };
    format!("{}\n{}", report.summary, body)
}

/// One Missing flag per required section without substantive content.
pub fn heuristic_check(report: &StructuredReport) -> Vec<IssueFlag> {
    SectionKind::REQUIRED
        .into_iter()
        .filter_map(|kind| {
            let content = report.content(kind);
            let detail = if content.trim().is_empty() {
                format!("{} section is absent", kind.abbreviation())
            } else if !is_substantive(content) {
                format!(
                    "{} section has fewer than {MIN_SUBSTANCE_TOKENS} tokens",
                    kind.abbreviation()
                )
            } else {
                return None;
            };
            Some(IssueFlag {
                section: kind,
                issue_class: IssueClass::Missing,
                detail,
                source: FlagSource::Heuristic,
            })
        })
        .collect()
}

/// Flag raised when the classifier score crosses the threshold.
pub fn classifier_flag(score: f64, threshold: f64) -> IssueFlag {
    IssueFlag {
        section: SectionKind::StepsToReproduce,
        issue_class: IssueClass::Enhance,
        detail: format!("classifier score {score:.3} at or above threshold {threshold:.2}"),
        source: FlagSource::Classifier,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub flags: Vec<IssueFlag>,
    pub recommendations: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum AnalyzeError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("malformed completion: {0}")]
    MalformedCompletion(String),
    #[error("prompt {0} missing from catalog")]
    MissingPrompt(String),
}

/// Parse the analyzer's line format.
///
/// `SECTION | CLASS | detail` lines become flags, `RECOMMENDATION:` lines
/// recommendations, and a lone `NONE` means no findings. Lines naming an
/// unknown or non-required section are dropped with a warning.
pub fn parse_analysis(completion: &str) -> Result<Analysis, AnalyzeError> {
    let mut out = Analysis::default();
    let mut recognized = false;
    for raw in completion.lines() {
        let line = raw.trim().trim_start_matches(['-', '*', '•']).trim();
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        if line.eq_ignore_ascii_case("none") {
            recognized = true;
            continue;
        }
        if line
            .get(..15)
            .is_some_and(|p| p.eq_ignore_ascii_case("recommendation:"))
        {
            let text = line[15..].trim();
            if !text.is_empty() {
                out.recommendations.push(text.to_string());
            }
            recognized = true;
            continue;
        }
        let parts: Vec<&str> = line.splitn(3, '|').map(str::trim).collect();
        if parts.len() < 2 {
            continue;
        }
        recognized = true;
        let section =
            SectionKind::parse_loose(parts[0]).filter(|s| SectionKind::REQUIRED.contains(s));
        let class = IssueClass::parse_loose(parts[1]);
        match (section, class) {
            (Some(section), Some(issue_class)) => out.flags.push(IssueFlag {
                section,
                issue_class,
                detail: parts.get(2).copied().unwrap_or("").to_string(),
                source: FlagSource::LlmAnalyzer,
            }),
            _ => out.warnings.push(format!("dropped analyzer line: {line}")),
        }
    }
    if !recognized && !completion.trim().is_empty() {
        return Err(AnalyzeError::MalformedCompletion(
            "no finding, recommendation or NONE line".into(),
        ));
    }
    out.flags = merge_flags(out.flags);
    Ok(out)
}

fn prior_findings(score: f64, threshold: f64, flags: &[IssueFlag]) -> String {
    let mut lines = vec![format!(
        "Classifier probability of low quality: {score:.3} (threshold {threshold:.2})"
    )];
    if flags.is_empty() {
        lines.push("Structural check: all required sections present".into());
    }
    for f in flags {
        lines.push(format!(
            "Structural check: {} {} ({})",
            f.section.abbreviation(),
            f.issue_class,
            f.detail
        ));
    }
    lines.join("\n")
}

/// Ask the model for per-section findings, given the earlier checks.
pub fn llm_analyze(
    report: &StructuredReport,
    classifier_score: f64,
    threshold: f64,
    heuristic_flags: &[IssueFlag],
    gateway: &Gateway,
    catalog: &PromptCatalog,
) -> Result<Analysis, AnalyzeError> {
    let prompt = catalog
        .task(ANALYZE_PROMPT_ID)
        .ok_or_else(|| AnalyzeError::MissingPrompt(ANALYZE_PROMPT_ID.into()))?;
    let rendered = format!("Summary: {}\n\n{}", report.summary, report.render());
    let user = fill_slots(
        &prompt.body,
        &[
            (
                "prior_findings",
                &prior_findings(classifier_score, threshold, heuristic_flags),
            ),
            ("report", &rendered),
        ],
    );
    let completion = gateway.chat(&ChatRequest::new(
        &prompt.prompt_id,
        &prompt.system_text,
        user,
    ))?;
    parse_analysis(&completion)
}

#[derive(Debug, Clone)]
pub struct Detector {
    pub model: ClassifierModel,
    pub catalog: PromptCatalog,
}

impl Detector {
    pub fn new(model: ClassifierModel, catalog: PromptCatalog) -> Self {
        Detector { model, catalog }
    }

    /// Classify, check structure, and run the analyzer only if either tier fires.
    pub fn detect(&self, report: &StructuredReport, gateway: &Gateway) -> DetectionResult {
        let score = self.model.score(&classifier_text(report));
        let threshold = self.model.threshold;
        let heuristic = heuristic_check(report);
        let mut flags = Vec::new();
        if self.model.is_low_quality(score) {
            flags.push(classifier_flag(score, threshold));
        }
        flags.extend(heuristic.iter().cloned());
        let llm_invoked = !flags.is_empty();
        let mut recommendations = Vec::new();
        let mut warnings = Vec::new();
        if llm_invoked {
            match llm_analyze(report, score, threshold, &heuristic, gateway, &self.catalog) {
                Ok(a) => {
                    flags.extend(a.flags);
                    recommendations = a.recommendations;
                    warnings = a.warnings;
                }
                Err(AnalyzeError::MalformedCompletion(m)) => {
                    warnings.push(format!("analyzer output ignored: {m}"))
                }
                Err(e) => warnings.push(format!("degraded analysis: {e}")),
            }
        }
        let flags = merge_flags(flags);
        DetectionResult {
            key: report.key.clone(),
            verdict: if flags.is_empty() {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
            classifier_score: score,
            flags,
            recommendations,
            llm_invoked,
            warnings,
        }
    }
}

/// Detect with the built-in prompt catalog.
pub fn detect_report(
    report: &StructuredReport,
    model: &ClassifierModel,
    gateway: &Gateway,
) -> DetectionResult {
    Detector::new(model.clone(), PromptCatalog::builtin()).detect(report, gateway)
}
