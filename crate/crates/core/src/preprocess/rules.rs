//! Header grammar and cue lexicons, loaded from a TOML rules file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{list_marker_len, SectionKind};

const DEFAULT_RULES: &str = include_str!("../../rules/default.toml");
const DEFAULT_TERMS: &str = include_str!("../../rules/minecraft_terms.txt");

pub const LEADING_VERB_WEIGHT: f64 = 1.0;
pub const INNER_VERB_WEIGHT: f64 = 0.5;
pub const LIST_MARKER_WEIGHT: f64 = 1.0;
pub const VERSION_WEIGHT: f64 = 1.0;
pub const OS_WEIGHT: f64 = 1.0;
pub const EDITION_WEIGHT: f64 = 0.5;
pub const FAILURE_WEIGHT: f64 = 1.0;
pub const NEGATION_WEIGHT: f64 = 0.5;
pub const MODAL_WEIGHT: f64 = 1.0;
pub const DOMAIN_WEIGHT: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum RulesError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing rules: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid pattern {pattern:?}: {source}")]
    Pattern {
        pattern: String,
        source: regex::Error,
    },
    #[error("unsupported rules version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, Deserialize)]
struct RulesFile {
    version: u32,
    threshold: f64,
    #[serde(default)]
    protected_abbreviations: Vec<String>,
    #[serde(default)]
    domain_terms_file: Option<String>,
    headers: BTreeMap<SectionKind, Vec<String>>,
    cues: Lexicons,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Lexicons {
    pub action_verbs: Vec<String>,
    #[serde(default)]
    pub action_phrases: Vec<String>,
    pub os_names: Vec<String>,
    pub edition_names: Vec<String>,
    pub version_patterns: Vec<String>,
    pub failure_verbs: Vec<String>,
    pub negations: Vec<String>,
    pub modals: Vec<String>,
}

/// Cue votes for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Votes {
    pub section_votes: BTreeMap<SectionKind, f64>,
    pub matched_cues: Vec<String>,
}

impl Votes {
    /// Winning section: vote ≥ threshold and strictly above every other vote.
    pub fn winner(&self, threshold: f64) -> Option<SectionKind> {
        let mut ranked: Vec<(SectionKind, f64)> =
            self.section_votes.iter().map(|(k, v)| (*k, *v)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        let (best, score) = *ranked.first()?;
        let runner_up = ranked.get(1).map_or(0.0, |r| r.1);
        (score >= threshold && score > runner_up).then_some(best)
    }
}

/// A header line: the section it opens and the byte offset where its inline content starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeaderMatch {
    pub section: SectionKind,
    pub content_start: usize,
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    pub version: u32,
    pub threshold: f64,
    pub protected_abbreviations: Vec<String>,
    pub lexicons: Lexicons,
    pub domain_terms: Vec<String>,
    header_res: Vec<(SectionKind, Regex)>,
    version_res: Vec<Regex>,
    phrase_res: Vec<(&'static str, Regex)>,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet::parse(DEFAULT_RULES, DEFAULT_TERMS).expect("built-in rules parse")
    }
}

fn word_regex(phrases: &[String]) -> Option<Regex> {
    if phrases.is_empty() {
        return None;
    }
    let mut sorted: Vec<&String> = phrases.iter().collect();
    sorted.sort_by_key(|p| std::cmp::Reverse(p.len()));
    let alts: Vec<String> = sorted
        .iter()
        .map(|p| {
            let p = p.to_lowercase();
            // a suffix form like "n't" attaches to the previous word
            let lead = if p.starts_with("n'") || !p.starts_with(char::is_alphanumeric) {
                ""
            } else {
                r"\b"
            };
            format!("{lead}{}", regex::escape(&p))
        })
        .collect();
    Some(Regex::new(&format!(r"(?i)(?:{})\b", alts.join("|"))).unwrap())
}

fn parse_terms(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

impl RuleSet {
    /// Parse a rules file; `terms` is the domain-terms file content.
    pub fn parse(rules: &str, terms: &str) -> Result<Self, RulesError> {
        let file: RulesFile = toml::from_str(rules)?;
        Self::build(file, parse_terms(terms))
    }

    /// Load a rules file; its `domain_terms_file` resolves relative to the file.
    pub fn load(path: &Path) -> Result<Self, RulesError> {
        let io = |p: &Path| {
            let p = p.display().to_string();
            move |source| RulesError::Io { path: p, source }
        };
        let text = fs::read_to_string(path).map_err(io(path))?;
        let file: RulesFile = toml::from_str(&text)?;
        let terms = match &file.domain_terms_file {
            Some(name) => {
                let p = path.parent().unwrap_or(Path::new(".")).join(name);
                parse_terms(&fs::read_to_string(&p).map_err(io(&p))?)
            }
            None => Vec::new(),
        };
        Self::build(file, terms)
    }

    fn build(file: RulesFile, domain_terms: Vec<String>) -> Result<Self, RulesError> {
        if file.version != 1 {
            return Err(RulesError::Version(file.version));
        }
        let mut header_res = Vec::new();
        for (section, names) in &file.headers {
            let mut names: Vec<&String> = names.iter().collect();
            names.sort_by_key(|n| std::cmp::Reverse(n.len()));
            let alts: Vec<String> = names.iter().map(|n| regex::escape(n)).collect();
            let pattern = format!(
                r"(?i)^\s*(?:h[1-6]\.\s*|#+\s*|\*\s*)?(?:{})\s*(?:\([^)\n]*\)\s*)?(?:[:\-]\s*|$)",
                alts.join("|")
            );
            let re =
                Regex::new(&pattern).map_err(|source| RulesError::Pattern { pattern, source })?;
            header_res.push((*section, re));
        }
        let mut version_res = Vec::new();
        for pattern in &file.cues.version_patterns {
            let re = Regex::new(pattern).map_err(|source| RulesError::Pattern {
                pattern: pattern.clone(),
                source,
            })?;
            version_res.push(re);
        }
        let lex = &file.cues;
        let phrase_res = [
            ("os_name", word_regex(&lex.os_names)),
            ("edition", word_regex(&lex.edition_names)),
            ("failure_verb", word_regex(&lex.failure_verbs)),
            ("negation", word_regex(&lex.negations)),
            ("modal", word_regex(&lex.modals)),
            ("domain_term", word_regex(&domain_terms)),
        ]
        .into_iter()
        .filter_map(|(name, re)| re.map(|re| (name, re)))
        .collect();
        Ok(RuleSet {
            version: file.version,
            threshold: file.threshold,
            protected_abbreviations: file.protected_abbreviations,
            lexicons: file.cues,
            domain_terms,
            header_res,
            version_res,
            phrase_res,
        })
    }

    /// Match `line` against the header grammar. The header must end the line
    /// or be followed by `:` or `-`.
    pub fn match_header(&self, line: &str) -> Option<HeaderMatch> {
        // the longest match wins so "expected result" beats a bare "expected"
        self.header_res
            .iter()
            .filter_map(|(section, re)| re.find(line).map(|m| (*section, m.end())))
            .max_by_key(|(_, end)| *end)
            .map(|(section, end)| HeaderMatch {
                section,
                content_start: end,
            })
    }

    fn phrase(&self, name: &str, text: &str) -> bool {
        self.phrase_res
            .iter()
            .any(|(n, re)| *n == name && re.is_match(text))
    }

    /// Score a sentence against every cue lexicon.
    pub fn votes(&self, sentence: &str) -> Votes {
        let mut votes: BTreeMap<SectionKind, f64> = BTreeMap::new();
        let mut cues = Vec::new();
        let mut add = |section, weight, cue: &str| {
            *votes.entry(section).or_default() += weight;
            cues.push(cue.to_string());
        };
        let trimmed = sentence.trim();
        let marker = list_marker_len(trimmed);
        let body = &trimmed[marker.unwrap_or(0)..];
        let lower = body.to_lowercase();

        if marker.is_some() {
            add(
                SectionKind::StepsToReproduce,
                LIST_MARKER_WEIGHT,
                "list_marker",
            );
        }
        let words: Vec<&str> = lower
            .split(|c: char| !(c.is_alphanumeric() || c == '-'))
            .filter(|w| !w.is_empty())
            .collect();
        let lex = &self.lexicons;
        let leads = words
            .first()
            .is_some_and(|w| lex.action_verbs.iter().any(|v| v == w))
            || lex
                .action_phrases
                .iter()
                .any(|p| lower.starts_with(p.as_str()));
        if leads {
            add(
                SectionKind::StepsToReproduce,
                LEADING_VERB_WEIGHT,
                "imperative_verb",
            );
        } else if words
            .iter()
            .any(|w| lex.action_verbs.iter().any(|v| v == w))
        {
            add(
                SectionKind::StepsToReproduce,
                INNER_VERB_WEIGHT,
                "action_verb",
            );
        }

        if self.version_res.iter().any(|re| re.is_match(&lower)) {
            add(SectionKind::Environment, VERSION_WEIGHT, "version_number");
        }
        if self.phrase("os_name", &lower) {
            add(SectionKind::Environment, OS_WEIGHT, "os_name");
        }
        if self.phrase("edition", &lower) {
            add(SectionKind::Environment, EDITION_WEIGHT, "edition");
        }
        if self.phrase("failure_verb", &lower) {
            add(
                SectionKind::ObservedBehavior,
                FAILURE_WEIGHT,
                "failure_verb",
            );
        }
        if self.phrase("negation", &lower) {
            add(SectionKind::ObservedBehavior, NEGATION_WEIGHT, "negation");
        }
        if self.phrase("modal", &lower) {
            add(SectionKind::ExpectedBehavior, MODAL_WEIGHT, "modal");
        }
        if self.phrase("domain_term", &lower) {
            // domain nouns reinforce an action or a problem statement already present
            let s2r = votes
                .get(&SectionKind::StepsToReproduce)
                .copied()
                .unwrap_or(0.0);
            let ob = votes
                .get(&SectionKind::ObservedBehavior)
                .copied()
                .unwrap_or(0.0);
            if s2r > 0.0 || ob > 0.0 {
                let target = if s2r >= ob {
                    SectionKind::StepsToReproduce
                } else {
                    SectionKind::ObservedBehavior
                };
                *votes.entry(target).or_default() += DOMAIN_WEIGHT;
                cues.push("domain_term".into());
            }
        }
        Votes {
            section_votes: votes,
            matched_cues: cues,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_match_with_colon_or_alone() {
        let r = RuleSet::default();
        let h = r.match_header("Steps to reproduce:").unwrap();
        assert_eq!(h.section, SectionKind::StepsToReproduce);
        assert_eq!(
            r.match_header("Expected: Z").unwrap(),
            HeaderMatch {
                section: SectionKind::ExpectedBehavior,
                content_start: 10
            }
        );
        assert_eq!(
            r.match_header("Expected Result: it works")
                .unwrap()
                .content_start,
            17
        );
        assert_eq!(
            r.match_header("OB").unwrap().section,
            SectionKind::ObservedBehavior
        );
        assert_eq!(r.match_header("What happened?").map(|h| h.section), None);
        assert_eq!(
            r.match_header("h3. Actual results").unwrap().section,
            SectionKind::ObservedBehavior
        );
        assert!(r.match_header("Steps are hard to climb").is_none());
        assert!(r.match_header("Observed that the chest is gone").is_none());
        assert!(r.match_header("Obviously broken").is_none());
    }

    #[test]
    fn modal_sentence_votes_expected() {
        let r = RuleSet::default();
        let v = r.votes("The game should save the world");
        assert_eq!(v.winner(r.threshold), Some(SectionKind::ExpectedBehavior));
        assert_eq!(v.matched_cues, ["modal"]);
    }

    #[test]
    fn imperative_and_list_marker_vote_steps() {
        let r = RuleSet::default();
        let v = r.votes("1. Place a hopper under a chest");
        assert_eq!(v.section_votes[&SectionKind::StepsToReproduce], 2.5);
        assert_eq!(v.winner(r.threshold), Some(SectionKind::StepsToReproduce));
    }

    #[test]
    fn environment_cues() {
        let r = RuleSet::default();
        let v = r.votes("Running 1.21.4 on Windows 11");
        assert_eq!(v.section_votes[&SectionKind::Environment], 2.0);
        assert_eq!(v.winner(r.threshold), Some(SectionKind::Environment));
    }

    #[test]
    fn observed_cues() {
        let r = RuleSet::default();
        let v = r.votes("The hopper doesn't pick up items");
        assert_eq!(v.section_votes[&SectionKind::ObservedBehavior], 1.0);
        assert_eq!(v.winner(r.threshold), Some(SectionKind::ObservedBehavior));
        assert_eq!(
            r.votes("The game crashed").winner(r.threshold),
            Some(SectionKind::ObservedBehavior)
        );
    }

    #[test]
    fn ties_and_weak_votes_stay_unassigned() {
        let r = RuleSet::default();
        assert_eq!(r.votes("Hello there everyone").winner(r.threshold), None);
        // failure verb and modal tie at 1.0
        assert_eq!(r.votes("It crashed, it must").winner(r.threshold), None);
        assert!(r.votes("a piano").section_votes.is_empty());
    }

    #[test]
    fn every_nonzero_vote_has_a_cue() {
        let r = RuleSet::default();
        for s in [
            "Open the chest",
            "Nothing happens on Linux",
            "x",
            "It should work on java 1.20",
        ] {
            let v = r.votes(s);
            assert!(v.section_votes.values().all(|&w| w > 0.0));
            assert!(v.section_votes.is_empty() || !v.matched_cues.is_empty());
        }
    }

    #[test]
    fn rules_load_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("r.toml"),
            DEFAULT_RULES.replace("minecraft_terms.txt", "t.txt"),
        )
        .unwrap();
        fs::write(dir.path().join("t.txt"), "widget\n# comment\n").unwrap();
        let r = RuleSet::load(&dir.path().join("r.toml")).unwrap();
        assert_eq!(r.domain_terms, ["widget"]);
    }
}
