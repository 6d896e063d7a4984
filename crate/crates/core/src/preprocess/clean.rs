//! Markup and URL removal.

use std::sync::OnceLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovedKind {
    Url,
    Markdown,
    HtmlTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedSpan {
    pub kind: RemovedKind,
    pub original: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanedText {
    pub text: String,
    pub removed_spans: Vec<RemovedSpan>,
}

impl CleanedText {
    /// Wrap text that needs no cleaning.
    pub fn plain(text: impl Into<String>) -> Self {
        CleanedText {
            text: text.into(),
            removed_spans: Vec::new(),
        }
    }
}

/// How a pattern's match is rewritten.
#[derive(Clone, Copy)]
enum Keep {
    /// Drop the whole match.
    Nothing,
    /// Replace the match with capture group `n`.
    Group(usize),
    /// Replace with groups 1, 2, 3 concatenated (boundary, inner, boundary).
    Bounded,
}

struct Rule {
    kind: RemovedKind,
    re: Regex,
    keep: Keep,
}

fn rules() -> &'static [Rule] {
    static RULES: OnceLock<Vec<Rule>> = OnceLock::new();
    RULES.get_or_init(|| {
        let r = |kind, pat: &str, keep| Rule {
            kind,
            re: Regex::new(pat).unwrap(),
            keep,
        };
        use Keep::*;
        use RemovedKind::*;
        vec![
            // Jira wiki block markup, inner text kept
            r(Markdown, r"(?s)\{code(?::[^}]*)?\}(.*?)\{code\}", Group(1)),
            r(
                Markdown,
                r"(?s)\{noformat(?::[^}]*)?\}(.*?)\{noformat\}",
                Group(1),
            ),
            r(Markdown, r"(?s)\{quote\}(.*?)\{quote\}", Group(1)),
            r(
                Markdown,
                r"(?s)\{color(?::[^}]*)?\}(.*?)\{color\}",
                Group(1),
            ),
            r(
                Markdown,
                r"(?s)\{panel(?::[^}]*)?\}(.*?)\{panel\}",
                Group(1),
            ),
            r(
                Markdown,
                r"\{(?:code|noformat|quote|color|panel)(?::[^}]*)?\}",
                Nothing,
            ),
            r(Markdown, r"(?s)```[A-Za-z0-9_+-]*\n?(.*?)```", Group(1)),
            // attachments and images carry no text we can use
            r(Markdown, r"!\[([^\]\n]*)\]\([^)\n]*\)", Group(1)),
            r(
                Markdown,
                r"![^!\s][^!\n]*\.(?:png|jpe?g|gif|bmp|webp|mp4|mov)(?:\|[^!\n]*)?!",
                Nothing,
            ),
            // links keep their label
            r(Markdown, r"\[([^\]\|\n]+)\|[^\]\n]+\]", Group(1)),
            r(Markdown, r"\[([^\]\n]+)\]\([^)\s]+\)", Group(1)),
            r(HtmlTag, r"<[^>\n]+>", Nothing),
            r(Url, r"https?://\S+", Nothing),
            r(Url, r"www\.\S+", Nothing),
            r(Markdown, r"\{\{([^}\n]+)\}\}", Group(1)),
            r(Markdown, r"(?m)^[ \t]*(?:h[1-6]\.|#{2,6})[ \t]+", Nothing),
            r(Markdown, r"\*\*([^*\n]+)\*\*", Group(1)),
            r(Markdown, r"`([^`\n]+)`", Group(1)),
            r(
                Markdown,
                r"(^|[^\w*])\*([^*\s](?:[^*\n]*[^*\s])?)\*($|[^\w*])",
                Bounded,
            ),
            r(
                Markdown,
                r"(^|[^\w_])_([^_\s](?:[^_\n]*[^_\s])?)_($|[^\w_])",
                Bounded,
            ),
        ]
    })
}

fn apply(rule: &Rule, text: &str, removed: &mut Vec<RemovedSpan>) -> Option<String> {
    if !rule.re.is_match(text) {
        return None;
    }
    let out = rule.re.replace_all(text, |caps: &Captures<'_>| {
        let whole = caps.get(0).unwrap().as_str();
        let g = |i: usize| caps.get(i).map_or("", |m| m.as_str());
        let (original, replacement) = match rule.keep {
            Keep::Nothing => (whole.to_string(), String::new()),
            Keep::Group(n) => (whole.to_string(), g(n).to_string()),
            Keep::Bounded => {
                // record only the marked-up part, not the boundary characters
                let marked = &whole[g(1).len()..whole.len() - g(3).len()];
                (marked.to_string(), format!("{}{}{}", g(1), g(2), g(3)))
            }
        };
        removed.push(RemovedSpan {
            kind: rule.kind,
            original,
        });
        replacement
    });
    Some(out.into_owned())
}

fn normalize_whitespace(text: &str) -> String {
    let mut lines: Vec<String> = Vec::new();
    for line in text.replace("\r\n", "\n").replace('\r', "\n").split('\n') {
        let collapsed = line
            .split([' ', '\t', '\u{a0}'])
            .filter(|w| !w.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        if collapsed.is_empty() && lines.last().is_some_and(|l| l.is_empty()) {
            continue;
        }
        lines.push(collapsed);
    }
    lines.join("\n").trim().to_string()
}

/// Remove URLs, Jira/Markdown markup and HTML tags, keeping the inner text of markup.
///
/// Rules are re-applied until nothing matches, so removal never leaves a
/// freshly formed match behind.
pub fn clean_text(raw: &str) -> CleanedText {
    let mut text = raw.to_string();
    let mut removed = Vec::new();
    for _ in 0..16 {
        let mut changed = false;
        for rule in rules() {
            if let Some(next) = apply(rule, &text, &mut removed) {
                text = next;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    CleanedText {
        text: normalize_whitespace(&text),
        removed_spans: removed,
    }
}

/// True if any cleaning pattern still matches `text`.
pub fn has_markup(text: &str) -> bool {
    rules().iter().any(|r| r.re.is_match(text))
}
