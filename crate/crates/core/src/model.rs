//! Domain types shared by every pipeline stage.
//!
//! All types here are plain values: they serialize to the corpus JSONL format
//! with snake_case field names and are freely shareable across threads.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// A fetched tracker issue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBugReport {
    pub key: String,
    pub summary: String,
    #[serde(default)]
    pub description: String,
    pub created: DateTime<Utc>,
    pub updated: DateTime<Utc>,
    pub status: String,
    #[serde(default)]
    pub resolution: Option<String>,
    #[serde(default)]
    pub comments: Vec<Comment>,
    #[serde(default)]
    pub affected_versions: Vec<String>,
    #[serde(default)]
    pub priority: Option<String>,
    #[serde(default)]
    pub issue_links: Vec<IssueLink>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub author: String,
    pub body: String,
    pub created: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueLink {
    pub link_type: String,
    pub target_key: String,
}

impl RawBugReport {
    /// Invariant violations for a single report (uniqueness is a corpus-level check).
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.key.trim().is_empty() {
            out.push("empty issue key".to_string());
        }
        if self.created > self.updated {
            out.push(format!("{}: created is after updated", self.key));
        }
        out
    }
}

/// The four template sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    StepsToReproduce,
    Environment,
    ObservedBehavior,
    ExpectedBehavior,
}

impl SectionKind {
    pub const ALL: [SectionKind; 4] = [
        SectionKind::StepsToReproduce,
        SectionKind::Environment,
        SectionKind::ObservedBehavior,
        SectionKind::ExpectedBehavior,
    ];

    /// Sections a complete report must carry.
    pub const REQUIRED: [SectionKind; 3] = [
        SectionKind::StepsToReproduce,
        SectionKind::ObservedBehavior,
        SectionKind::ExpectedBehavior,
    ];

    /// Human-readable heading.
    pub fn title(self) -> &'static str {
        match self {
            SectionKind::StepsToReproduce => "Steps to Reproduce",
            SectionKind::Environment => "Environment",
            SectionKind::ObservedBehavior => "Observed Behavior",
            SectionKind::ExpectedBehavior => "Expected Behavior",
        }
    }

    pub fn abbreviation(self) -> &'static str {
        match self {
            SectionKind::StepsToReproduce => "S2R",
            SectionKind::Environment => "ENV",
            SectionKind::ObservedBehavior => "OB",
            SectionKind::ExpectedBehavior => "EB",
        }
    }

    /// Accepts abbreviations, snake_case names and human titles, case-insensitively.
    pub fn parse_loose(name: &str) -> Option<SectionKind> {
        let norm: String = name
            .trim()
            .to_lowercase()
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect();
        match norm.as_str() {
            "s2r" | "stepstoreproduce" | "steps" => Some(SectionKind::StepsToReproduce),
            "env" | "environment" => Some(SectionKind::Environment),
            "ob" | "observedbehavior" | "observedbehaviour" | "observed" => {
                Some(SectionKind::ObservedBehavior)
            }
            "eb" | "expectedbehavior" | "expectedbehaviour" | "expected" => {
                Some(SectionKind::ExpectedBehavior)
            }
            _ => None,
        }
    }
}

impl fmt::Display for SectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SectionKind::StepsToReproduce => "StepsToReproduce",
            SectionKind::Environment => "Environment",
            SectionKind::ObservedBehavior => "ObservedBehavior",
            SectionKind::ExpectedBehavior => "ExpectedBehavior",
        };
        f.write_str(name)
    }
}

/// Where a section's content came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LlmExtracted,
    HeaderMatched,
    HeuristicClassified,
    MetadataEnriched,
    Generated,
    Absent,
}

impl Provenance {
    /// Provenances whose content must originate from the source text.
    pub fn is_extracted(self) -> bool {
        matches!(
            self,
            Provenance::LlmExtracted | Provenance::HeaderMatched | Provenance::HeuristicClassified
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub content: String,
    pub provenance: Provenance,
}

impl Section {
    pub fn absent() -> Self {
        Section {
            content: String::new(),
            provenance: Provenance::Absent,
        }
    }

    pub fn new(content: impl Into<String>, provenance: Provenance) -> Self {
        Section {
            content: content.into(),
            provenance,
        }
    }

    pub fn is_absent(&self) -> bool {
        self.provenance == Provenance::Absent
    }
}

/// The four-section report template.
///
/// `summary` and `source_text` (the cleaned description) travel with the
/// template so later stages can build prompts and retrieval queries without
/// re-joining the raw corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredReport {
    pub key: String,
    #[serde(default)]
    pub summary: String,
    #[serde(default)]
    pub source_text: String,
    pub sections: BTreeMap<SectionKind, Section>,
    #[serde(default)]
    pub s2r_steps: Vec<String>,
}

impl StructuredReport {
    /// A report with every section present and Absent.
    pub fn empty(key: impl Into<String>) -> Self {
        StructuredReport {
            key: key.into(),
            summary: String::new(),
            source_text: String::new(),
            sections: SectionKind::ALL
                .iter()
                .map(|k| (*k, Section::absent()))
                .collect(),
            s2r_steps: Vec::new(),
        }
    }

    pub fn section(&self, kind: SectionKind) -> Option<&Section> {
        self.sections.get(&kind)
    }

    /// Section content, or "" when the key is missing.
    pub fn content(&self, kind: SectionKind) -> &str {
        self.sections
            .get(&kind)
            .map(|s| s.content.as_str())
            .unwrap_or("")
    }

    pub fn is_absent(&self, kind: SectionKind) -> bool {
        self.sections.get(&kind).is_none_or(Section::is_absent)
    }

    pub fn has_absent(&self) -> bool {
        SectionKind::ALL.iter().any(|k| self.is_absent(*k))
    }

    /// Replace a section. Setting S2R also re-derives the step list.
    pub fn set_section(&mut self, kind: SectionKind, section: Section) {
        if kind == SectionKind::StepsToReproduce {
            self.s2r_steps = parse_steps(&section.content);
        }
        self.sections.insert(kind, section);
    }

    /// Replace S2R with an explicit step list; content becomes the enumerated form.
    pub fn set_steps(&mut self, steps: Vec<String>, provenance: Provenance) {
        let content = enumerate_steps(&steps);
        self.sections.insert(
            SectionKind::StepsToReproduce,
            Section::new(content, provenance),
        );
        self.s2r_steps = steps;
    }

    /// Text of the whole template, one headed block per non-empty section.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for kind in SectionKind::ALL {
            let content = self.content(kind);
            if content.is_empty() {
                continue;
            }
            if !out.is_empty() {
                out.push_str("\n\n");
            }
            out.push_str(kind.title());
            out.push_str(":\n");
            out.push_str(content);
        }
        out
    }
}

/// Split S2R content into steps: one per non-empty line, list markers stripped.
pub fn parse_steps(content: &str) -> Vec<String> {
    content
        .lines()
        .map(|l| strip_list_marker(l.trim()).trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

/// `1. a\n2. b` form of a step list.
pub fn enumerate_steps(steps: &[String]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Strip a leading "1.", "1)", "-", "*" or "#" list marker.
pub fn strip_list_marker(line: &str) -> &str {
    list_marker_len(line).map_or(line, |n| &line[n..])
}

/// Byte length of a leading list marker (including following whitespace), if any.
pub fn list_marker_len(line: &str) -> Option<usize> {
    let bytes = line.as_bytes();
    let mut i = 0;
    if let Some(bullet) = line
        .chars()
        .next()
        .filter(|c| matches!(c, '-' | '*' | '#' | '•'))
    {
        i = bullet.len_utf8();
        if bytes.len() > i && !bytes[i].is_ascii_whitespace() {
            return None;
        }
    } else {
        while i < bytes.len() && bytes[i].is_ascii_digit() && i < 3 {
            i += 1;
        }
        if i == 0 || i >= bytes.len() || !matches!(bytes[i], b'.' | b')') {
            return None;
        }
        i += 1;
        if i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            return None;
        }
    }
    while i < bytes.len() && bytes[i].is_ascii_whitespace() {
        i += 1;
    }
    Some(i)
}

/// Check every StructuredReport invariant; an empty list means valid.
pub fn validate_structured_report(report: &StructuredReport) -> Vec<String> {
    let mut out = Vec::new();
    for kind in SectionKind::ALL {
        let Some(section) = report.sections.get(&kind) else {
            out.push(format!("missing section key: {kind}"));
            continue;
        };
        let empty = section.content.trim().is_empty();
        if section.is_absent() && !empty {
            out.push(format!("section {kind} is Absent but has content"));
        }
        if !section.is_absent() && empty {
            out.push(format!("section {kind} is empty but not marked Absent"));
        }
    }
    if report
        .content(SectionKind::StepsToReproduce)
        .trim()
        .is_empty()
        != report.s2r_steps.is_empty()
    {
        out.push("s2r_steps inconsistent with S2R content".to_string());
    }
    out
}

/// Like [`validate_structured_report`], plus the rule that preprocessing never generates content.
pub fn validate_preprocessed(report: &StructuredReport) -> Vec<String> {
    let mut out = validate_structured_report(report);
    for (kind, section) in &report.sections {
        if section.provenance == Provenance::Generated {
            out.push(format!(
                "section {kind} has Generated provenance outside the improver"
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueClass {
    Missing,
    Incomplete,
    Ambiguous,
    Enhance,
}

impl IssueClass {
    pub const ALL: [IssueClass; 4] = [
        IssueClass::Missing,
        IssueClass::Incomplete,
        IssueClass::Ambiguous,
        IssueClass::Enhance,
    ];

    /// Higher is more severe: Missing > Incomplete > Ambiguous > Enhance.
    pub fn severity(self) -> u8 {
        match self {
            IssueClass::Missing => 3,
            IssueClass::Incomplete => 2,
            IssueClass::Ambiguous => 1,
            IssueClass::Enhance => 0,
        }
    }

    pub fn parse_loose(name: &str) -> Option<IssueClass> {
        match name.trim().to_lowercase().as_str() {
            "missing" => Some(IssueClass::Missing),
            "incomplete" => Some(IssueClass::Incomplete),
            "ambiguous" => Some(IssueClass::Ambiguous),
            "enhance" | "enhancement" | "needs enhancement" => Some(IssueClass::Enhance),
            _ => None,
        }
    }
}

impl fmt::Display for IssueClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IssueClass::Missing => "Missing",
            IssueClass::Incomplete => "Incomplete",
            IssueClass::Ambiguous => "Ambiguous",
            IssueClass::Enhance => "Enhance",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagSource {
    Classifier,
    Heuristic,
    LlmAnalyzer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueFlag {
    pub section: SectionKind,
    pub issue_class: IssueClass,
    pub detail: String,
    pub source: FlagSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub key: String,
    pub verdict: Verdict,
    pub classifier_score: f64,
    pub flags: Vec<IssueFlag>,
    pub recommendations: Vec<String>,
    pub llm_invoked: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DetectionResult {
    pub fn flags_for(&self, section: SectionKind) -> impl Iterator<Item = &IssueFlag> {
        self.flags.iter().filter(move |f| f.section == section)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if (self.verdict == Verdict::Fail) != !self.flags.is_empty() {
            out.push("verdict disagrees with flags".to_string());
        }
        if !(0.0..=1.0).contains(&self.classifier_score) {
            out.push("classifier_score outside [0,1]".to_string());
        }
        let gated = self
            .flags
            .iter()
            .any(|f| matches!(f.source, FlagSource::Classifier | FlagSource::Heuristic));
        if self.llm_invoked && !gated {
            out.push("llm_invoked without a classifier or heuristic flag".to_string());
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.flags {
            if !seen.insert((f.section, f.issue_class, f.source)) {
                out.push(format!(
                    "duplicate flag {}/{}/{:?}",
                    f.section, f.issue_class, f.source
                ));
            }
        }
        out
    }
}

/// Merge flags keeping the first of each (section, issue_class, source) triple.
pub fn merge_flags(flags: impl IntoIterator<Item = IssueFlag>) -> Vec<IssueFlag> {
    let mut seen = std::collections::HashSet::new();
    flags
        .into_iter()
        .filter(|f| seen.insert((f.section, f.issue_class, f.source)))
        .collect()
}
