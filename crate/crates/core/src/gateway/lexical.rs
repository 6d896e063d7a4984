//! Offline relevance scorer used when no cross-encoder is reachable.

use std::collections::BTreeSet;

use crate::text::tokens;

/// Cosine between the binary token-presence vectors of `query` and `candidate`:
/// `|Q ∩ C| / sqrt(|Q| · |C|)` over distinct lowercased alphanumeric tokens.
pub fn overlap_cosine(query: &str, candidate: &str) -> f64 {
    let q: BTreeSet<String> = tokens(query).into_iter().collect();
    let c: BTreeSet<String> = tokens(candidate).into_iter().collect();
    if q.is_empty() || c.is_empty() {
        return 0.0;
    }
    let shared = q.intersection(&c).count();
    shared as f64 / ((q.len() * c.len()) as f64).sqrt()
}

pub fn score_all(query: &str, candidates: &[String]) -> Vec<f64> {
    candidates
        .iter()
        .map(|c| overlap_cosine(query, c))
        .collect()
}
