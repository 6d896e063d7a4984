//! Section rewriting with few-shot templates, detector guidance and retrieved knowledge.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatRequest, Gateway, ProviderError};
use crate::model::{
    enumerate_steps, list_marker_len, strip_list_marker, DetectionResult, FlagSource, IssueClass,
    IssueFlag, Provenance, Section, SectionKind, StructuredReport,
};
use crate::prompts::{fill_slots, PromptCatalog, PromptTemplate};
use crate::rag::{self, RagConfig, RetrievalResult, VectorIndex};

/// Default prompt budget in estimated tokens (characters / 4).
pub const DEFAULT_TOKEN_BUDGET: usize = 12_000;
pub const FORMAT_REMINDER: &str =
    "Format reminder: answer only with a numbered list of steps, one per line, in the form \"1. ...\".";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    pub rag: bool,
    pub detector: bool,
    pub few_shot: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        rag: true,
        detector: true,
        few_shot: true,
    };
    pub const NO_RAG: Ablation = Ablation {
        rag: false,
        ..Ablation::FULL
    };
    pub const NO_DETECTOR: Ablation = Ablation {
        detector: false,
        ..Ablation::FULL
    };
    pub const NO_FEW_SHOT: Ablation = Ablation {
        few_shot: false,
        ..Ablation::FULL
    };

    /// The four configurations compared in the component study.
    pub const STUDY: [Ablation; 4] = [
        Ablation::FULL,
        Ablation::NO_RAG,
        Ablation::NO_DETECTOR,
        Ablation::NO_FEW_SHOT,
    ];
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let off: Vec<&str> = [
            (self.rag, "RAG"),
            (self.detector, "Detector"),
            (self.few_shot, "Few-shot"),
        ]
        .into_iter()
        .filter(|(on, _)| !on)
        .map(|(_, n)| n)
        .collect();
        if off.is_empty() {
            f.write_str("Full")
        } else {
            write!(f, "w/o {}", off.join(", "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRecord {
    pub section: SectionKind,
    pub issue_class: IssueClass,
    pub prompt_id: String,
    pub retrieved_chunk_ids: Vec<String>,
    pub before: String,
    pub after: String,
    pub ablation_config: Ablation,
    /// Cache keys of the chat requests issued, in order (a retry adds one).
    #[serde(default)]
    pub request_hashes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ImprovementRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && !self.after.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovedReport {
    pub base: StructuredReport,
    pub records: Vec<ImprovementRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ImproveError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("no template for {section} / {issue_class}")]
    CatalogMissing {
        section: SectionKind,
        issue_class: IssueClass,
    },
    #[error("prompt needs {estimated} tokens with no knowledge left, budget is {budget}")]
    SlotOverflow { estimated: usize, budget: usize },
    #[error("{section} output did not parse as required: {message}")]
    UnparseableOutput {
        section: SectionKind,
        message: String,
    },
    #[error("configuration: {0}")]
    Config(String),
}

/// Template for the most severe flag on `section`; `None` when it has no flags.
pub fn select_template<'a>(
    catalog: &'a PromptCatalog,
    section: SectionKind,
    flags: &[IssueFlag],
) -> Result<Option<&'a PromptTemplate>, ImproveError> {
    let Some(issue_class) = flags
        .iter()
        .filter(|f| f.section == section)
        .map(|f| f.issue_class)
        .max_by_key(|c| c.severity())
    else {
        return Ok(None);
    };
    catalog
        .template(section, issue_class)
        .map(Some)
        .ok_or(ImproveError::CatalogMissing {
            section,
            issue_class,
        })
}

/// Rough token count used for the prompt budget.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// An assembled request and the knowledge blocks that made it in.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledPrompt {
    pub request: ChatRequest,
    pub knowledge_ids: Vec<String>,
    pub dropped_blocks: usize,
}

fn report_context(report: &StructuredReport, target: SectionKind) -> String {
    let mut out = format!("### Bug report\nSummary: {}", report.summary.trim());
    for kind in SectionKind::ALL {
        let content = report.content(kind).trim();
        if kind == target || content.is_empty() {
            continue;
        }
        out.push_str(&format!("\n\n{}:\n{content}", kind.title()));
    }
    let current = report.content(target).trim();
    if !current.is_empty() {
        out.push_str(&format!(
            "\n\n### Current {}\n{current}",
            kind_lower(target)
        ));
    }
    out
}

fn kind_lower(kind: SectionKind) -> String {
    kind.title().to_lowercase()
}

fn source_label(s: FlagSource) -> &'static str {
    match s {
        FlagSource::Classifier => "classifier",
        FlagSource::Heuristic => "structure check",
        FlagSource::LlmAnalyzer => "analyzer",
    }
}

fn detector_findings(detection: &DetectionResult) -> String {
    let mut out = String::from("### Detector findings");
    for f in &detection.flags {
        out.push_str(&format!(
            "\n- {} {}: {} ({})",
            f.section.abbreviation(),
            f.issue_class,
            f.detail.trim(),
            source_label(f.source)
        ));
    }
    if !detection.recommendations.is_empty() {
        out.push_str("\nRecommendations:");
        for r in &detection.recommendations {
            out.push_str(&format!("\n- {}", r.trim()));
        }
    }
    out
}

fn knowledge_block(blocks: &[(String, String, String)]) -> String {
    if blocks.is_empty() {
        return String::new();
    }
    let mut out = String::from("### Retrieved knowledge");
    for (i, (_, title, text)) in blocks.iter().enumerate() {
        out.push_str(&format!("\n\n[{}] {}\n{}", i + 1, title, text.trim()));
    }
    out
}

fn few_shot_block(template: &PromptTemplate) -> String {
    let mut out = String::from("### Examples");
    for p in &template.few_shot_pairs {
        out.push_str(&format!(
            "\n\nPoor:\n{}\n\nImproved:\n{}",
            p.bad_example.trim(),
            p.good_example.trim()
        ));
    }
    out
}

fn tidy(text: &str) -> String {
    let mut out = String::new();
    let mut blank = 0;
    for line in text.trim().lines() {
        if line.trim().is_empty() {
            blank += 1;
            continue;
        }
        if !out.is_empty() {
            out.push_str(if blank > 0 { "\n\n" } else { "\n" });
        }
        blank = 0;
        out.push_str(line.trim_end());
    }
    out
}

/// Fill a template's slots for one section.
///
/// Knowledge blocks follow rerank order; while the estimate exceeds
/// `token_budget`, the lowest-ranked block is dropped.
pub fn assemble_prompt(
    template: &PromptTemplate,
    report: &StructuredReport,
    detection: &DetectionResult,
    retrieval: Option<&RetrievalResult>,
    index: Option<&VectorIndex>,
    ablation: Ablation,
    token_budget: usize,
) -> Result<AssembledPrompt, ImproveError> {
    if ablation.rag != retrieval.is_some() {
        return Err(ImproveError::Config(
            "retrieval must be present exactly when RAG is enabled".into(),
        ));
    }
    let mut blocks: Vec<(String, String, String)> = match (retrieval, index) {
        (Some(r), Some(index)) => r
            .selected
            .iter()
            .filter_map(|s| index.get(&s.chunk_id))
            .map(|c| (c.chunk_id.clone(), c.source_title.clone(), c.text.clone()))
            .collect(),
        (Some(_), None) => {
            return Err(ImproveError::Config(
                "RAG enabled without a knowledge index".into(),
            ))
        }
        _ => Vec::new(),
    };
    let system = if ablation.few_shot {
        format!(
            "{}\n\n{}",
            template.system_text.trim(),
            few_shot_block(template)
        )
    } else {
        template.system_text.trim().to_string()
    };
    let context = report_context(report, template.section);
    let findings = if ablation.detector {
        detector_findings(detection)
    } else {
        String::new()
    };
    let mut dropped = 0;
    loop {
        let knowledge = knowledge_block(&blocks);
        let user = tidy(&fill_slots(
            &template.body,
            &[
                ("report_context", &context),
                ("detector_findings", &findings),
                ("retrieved_knowledge", &knowledge),
            ],
        ));
        let estimated = estimate_tokens(&system) + estimate_tokens(&user);
        if estimated <= token_budget {
            return Ok(AssembledPrompt {
                request: ChatRequest::new(&template.prompt_id, system, user),
                knowledge_ids: blocks.into_iter().map(|b| b.0).collect(),
                dropped_blocks: dropped,
            });
        }
        if blocks.pop().is_none() {
            return Err(ImproveError::SlotOverflow {
                estimated,
                budget: token_budget,
            });
        }
        dropped += 1;
    }
}

/// Parse an enumerated step list; lines without a list marker are ignored.
pub fn parse_step_list(completion: &str) -> Option<Vec<String>> {
    let steps: Vec<String> = completion
        .lines()
        .map(str::trim)
        .filter(|l| list_marker_len(l).is_some())
        .map(|l| strip_list_marker(l).trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    (!steps.is_empty()).then_some(steps)
}

fn strip_heading(section: SectionKind, text: &str) -> String {
    let trimmed = text.trim().trim_start_matches('#').trim_start();
    for name in [section.title(), section.abbreviation()] {
        if let Some(rest) = trimmed
            .get(..name.len())
            .filter(|p| p.eq_ignore_ascii_case(name))
        {
            let after = &trimmed[rest.len()..];
            if let Some(body) = after.trim_start().strip_prefix(':') {
                return body.trim().to_string();
            }
        }
    }
    trimmed.to_string()
}

/// Run one section's prompt and parse the answer.
///
/// S2R answers must be an enumerated list; a prose answer earns one retry
/// with a format reminder appended, then the record carries an error.
pub fn improve_section(
    section: SectionKind,
    template: &PromptTemplate,
    assembled: &AssembledPrompt,
    report: &StructuredReport,
    ablation: Ablation,
    gateway: &Gateway,
) -> Result<ImprovementRecord, ProviderError> {
    let mut record = ImprovementRecord {
        section,
        issue_class: template.issue_class,
        prompt_id: template.prompt_id.clone(),
        retrieved_chunk_ids: assembled.knowledge_ids.clone(),
        before: report.content(section).to_string(),
        after: String::new(),
        ablation_config: ablation,
        request_hashes: Vec::new(),
        error: None,
    };
    let mut request = assembled.request.clone();
    for attempt in 0..2 {
        record
            .request_hashes
            .push(gateway.chat_request_hash(&request));
        let completion = gateway.chat(&request)?;
        if section == SectionKind::StepsToReproduce {
            if let Some(steps) = parse_step_list(&completion) {
                record.after = enumerate_steps(&steps);
                return Ok(record);
            }
            if attempt == 0 {
                request.user_text = format!("{}\n\n{FORMAT_REMINDER}", request.user_text);
                continue;
            }
            record.error = Some(
                ImproveError::UnparseableOutput {
                    section,
                    message: "no enumerated steps after retry".into(),
                }
                .to_string(),
            );
        } else {
            let text = strip_heading(section, &completion);
            if text.is_empty() {
                record.error = Some(
                    ImproveError::UnparseableOutput {
                        section,
                        message: "empty completion".into(),
                    }
                    .to_string(),
                );
            } else {
                record.after = text;
            }
        }
        break;
    }
    Ok(record)
}

/// Everything `improve_report` needs besides the report itself.
#[derive(Debug, Clone, Copy)]
pub struct ImproveContext<'a> {
    pub catalog: &'a PromptCatalog,
    pub index: Option<&'a VectorIndex>,
    pub rag: RagConfig,
    pub token_budget: usize,
}

/// Sections to rewrite and the template for each.
fn plan<'a>(
    detection: &DetectionResult,
    ablation: Ablation,
    catalog: &'a PromptCatalog,
) -> Result<Vec<(SectionKind, &'a PromptTemplate)>, ImproveError> {
    let mut out = Vec::new();
    for section in SectionKind::REQUIRED {
        let template = if ablation.detector {
            select_template(catalog, section, &detection.flags)?
        } else {
            Some(catalog.template(section, IssueClass::Enhance).ok_or(
                ImproveError::CatalogMissing {
                    section,
                    issue_class: IssueClass::Enhance,
                },
            )?)
        };
        if let Some(t) = template {
            out.push((section, t));
        }
    }
    Ok(out)
}

/// Improve every flagged S2R/OB/EB section of one report.
///
/// Retrieval runs once and is shared by all sections. A section that fails
/// keeps its original content and gets a record with an error; only a
/// provider outage fails the whole report.
pub fn improve_report(
    report: &StructuredReport,
    detection: &DetectionResult,
    gateway: &Gateway,
    ablation: Ablation,
    ctx: ImproveContext<'_>,
) -> Result<ImprovedReport, ImproveError> {
    let plan = plan(detection, ablation, ctx.catalog)?;
    let mut out = ImprovedReport {
        base: report.clone(),
        records: Vec::new(),
        retrieval: None,
        warnings: Vec::new(),
    };
    if plan.is_empty() {
        return Ok(out);
    }
    if ablation.rag {
        let index = ctx
            .index
            .ok_or_else(|| ImproveError::Config("RAG enabled without a knowledge index".into()))?;
        let report_text = format!("{}\n\n{}", report.summary, report.render());
        let r = rag::retrieve(
            index,
            &report.summary,
            &report.source_text,
            &report_text,
            gateway,
            ctx.catalog,
            &ctx.rag,
        )?;
        out.warnings
            .extend(r.warnings.iter().map(|w| format!("{}: {w}", report.key)));
        out.retrieval = Some(r);
    }

    let results: Vec<Result<ImprovementRecord, ImproveError>> = std::thread::scope(|s| {
        let handles: Vec<_> = plan
            .iter()
            .map(|&(section, template)| {
                let retrieval = out.retrieval.as_ref();
                s.spawn(move || {
                    let assembled = assemble_prompt(
                        template,
                        report,
                        detection,
                        retrieval,
                        ctx.index.filter(|_| ablation.rag),
                        ablation,
                        ctx.token_budget,
                    )?;
                    Ok(improve_section(
                        section, template, &assembled, report, ablation, gateway,
                    )?)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("section worker panicked"))
            .collect()
    });

    for ((section, template), result) in plan.iter().zip(results) {
        let record = match result {
            Ok(r) => r,
            Err(ImproveError::Provider(e)) if e.is_outage() => {
                return Err(ImproveError::Provider(e))
            }
            Err(e) => ImprovementRecord {
                section: *section,
                issue_class: template.issue_class,
                prompt_id: template.prompt_id.clone(),
                retrieved_chunk_ids: Vec::new(),
                before: report.content(*section).to_string(),
                after: String::new(),
                ablation_config: ablation,
                request_hashes: Vec::new(),
                error: Some(e.to_string()),
            },
        };
        if record.succeeded() {
            out.base.set_section(
                *section,
                Section::new(record.after.clone(), Provenance::Generated),
            );
        } else if let Some(e) = &record.error {
            out.warnings
                .push(format!("{} {}: {e}", report.key, section.abbreviation()));
        }
        out.records.push(record);
    }
    Ok(out)
}
