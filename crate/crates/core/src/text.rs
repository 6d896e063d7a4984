//! Tokenization and small text measures shared across stages.

use std::collections::HashMap;

/// Minimum number of alphanumeric tokens for a section to count as present.
pub const MIN_SUBSTANCE_TOKENS: usize = 3;

/// Lowercased alphanumeric tokens, in order of appearance.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whether `text` carries enough tokens to count as a present section.
pub fn is_substantive(text: &str) -> bool {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .nth(MIN_SUBSTANCE_TOKENS - 1)
        .is_some()
}

/// Collapse every run of whitespace to one space and trim the ends.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Fraction of `fragment`'s tokens (as a multiset) that can be matched in `source`.
///
/// An empty fragment is trivially contained and scores 1.0.
pub fn token_containment(fragment: &str, source: &str) -> f64 {
    let needed = tokens(fragment);
    if needed.is_empty() {
        return 1.0;
    }
    let mut available: HashMap<String, usize> = HashMap::new();
    for t in tokens(source) {
        *available.entry(t).or_default() += 1;
    }
    let mut hit = 0usize;
    for t in &needed {
        if let Some(n) = available.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                hit += 1;
            }
        }
    }
    hit as f64 / needed.len() as f64
}

/// First `n` characters of `text`, on a char boundary.
pub fn prefix_chars(text: &str, n: usize) -> &str {
    match text.char_indices().nth(n) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}
