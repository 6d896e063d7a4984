//! Character-window chunking at whitespace boundaries.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_CHUNK_SIZE: usize = 1000;
pub const DEFAULT_OVERLAP: usize = 200;

/// A chunk as character offsets into its document body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Split `body` into windows of at most `size` characters where consecutive
/// windows share `overlap` characters.
///
/// A window end is pulled back to the nearest whitespace boundary (never past
/// the window midpoint) and a window start moves forward to the next word
/// start, so words are not cut unless a single word exceeds half a window.
pub fn chunk_text(body: &str, size: usize, overlap: usize) -> Vec<Window> {
    assert!(size > 0 && overlap < size, "chunk size must exceed overlap");
    let chars: Vec<char> = body.chars().collect();
    let n = chars.len();
    let ws = |i: usize| chars[i].is_whitespace();
    let boundary = |i: usize| i == 0 || i == n || ws(i) || ws(i - 1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + size).min(n);
        if end < n {
            let floor = start + size / 2;
            if let Some(b) = (floor + 1..=end).rev().find(|&i| boundary(i)) {
                end = b;
            }
        }
        let text: String = chars[start..end].iter().collect();
        if !text.trim().is_empty() {
            out.push(Window { start, end, text });
        }
        if end == n {
            break;
        }
        let mut next = end.saturating_sub(overlap).max(start + 1);
        while next < end && !boundary(next) {
            next += 1;
        }
        start = next;
    }
    out
}

/// Stable chunk id: the first 16 hex digits of SHA-256 over (source_id, ordinal).
pub fn chunk_id(source_id: &str, ordinal: usize) -> String {
    let mut h = Sha256::new();
    h.update(source_id.as_bytes());
    h.update([0x1f]);
    h.update(ordinal.to_string().as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}
