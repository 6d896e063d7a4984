//! Rule-based sentence segmentation.

use serde::{Deserialize, Serialize};

use crate::model::list_marker_len;

/// Abbreviations that never end a sentence.
pub const DEFAULT_PROTECTED: [&str; 4] = ["e.g.", "i.e.", "etc.", "vs."];

/// A sentence of the cleaned text. `start` and `end` are byte offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_list_marker_char(c: char) -> bool {
    matches!(c, '-' | '*' | '#' | '•')
}

/// Segment with the default protected abbreviations.
pub fn segment_sentences(text: &str) -> Vec<SentenceSpan> {
    segment_with(text, &DEFAULT_PROTECTED)
}

/// Split at line breaks and at `[.!?]+` followed by whitespace and an
/// uppercase letter, digit or list marker, unless the token ending there is
/// protected. A list item starts its own span.
pub fn segment_with<S: AsRef<str>>(text: &str, protected: &[S]) -> Vec<SentenceSpan> {
    let mut spans = Vec::new();
    let mut line_start = 0;
    for line in text.split('\n') {
        segment_line(text, line_start, line, protected, &mut spans);
        line_start += line.len() + 1;
    }
    spans
}

fn push(text: &str, start: usize, end: usize, out: &mut Vec<SentenceSpan>) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    if lead + trail >= slice.len() {
        return;
    }
    let (s, e) = (start + lead, end - trail);
    out.push(SentenceSpan {
        text: text[s..e].to_string(),
        start: s,
        end: e,
    });
}

fn segment_line<S: AsRef<str>>(
    text: &str,
    offset: usize,
    line: &str,
    protected: &[S],
    out: &mut Vec<SentenceSpan>,
) {
    let indent = line.len() - line.trim_start().len();
    let body = indent + list_marker_len(line.trim_start()).unwrap_or(0);
    let mut seg_start = 0;
    let chars: Vec<(usize, char)> = line.char_indices().collect();
    let mut i = chars
        .iter()
        .position(|&(b, _)| b >= body)
        .unwrap_or(chars.len());
    while i < chars.len() {
        let (_, c) = chars[i];
        if !matches!(c, '.' | '!' | '?') {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?') {
            j += 1;
        }
        let punct_end = chars.get(j).map_or(line.len(), |&(b, _)| b);
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        if k == j || k >= chars.len() {
            i = j;
            continue;
        }
        let next = chars[k].1;
        let opens = next.is_uppercase() || next.is_ascii_digit() || is_list_marker_char(next);
        let word_start = line[..punct_end]
            .rfind(char::is_whitespace)
            .map_or(0, |p| p + 1);
        let word = line[word_start..punct_end].to_lowercase();
        let is_protected = protected
            .iter()
            .any(|p| p.as_ref().eq_ignore_ascii_case(&word));
        if opens && !is_protected {
            push(text, offset + seg_start, offset + punct_end, out);
            seg_start = chars[k].0;
        }
        i = k;
    }
    push(text, offset + seg_start, offset + line.len(), out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(s: &str) -> Vec<String> {
        segment_sentences(s).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn two_sentences() {
        assert_eq!(
            texts("I placed a block. It vanished."),
            ["I placed a block.", "It vanished."]
        );
    }

    #[test]
    fn version_strings_survive() {
        assert_eq!(
            texts("Update to 1.21.4. Then crash."),
            ["Update to 1.21.4.", "Then crash."]
        );
    }

    #[test]
    fn list_items_are_spans() {
        assert_eq!(
            texts("1. Open world\n2. Break block"),
            ["1. Open world", "2. Break block"]
        );
        assert_eq!(
            texts("- Open world\n* Break block"),
            ["- Open world", "* Break block"]
        );
    }

    #[test]
    fn abbreviations_do_not_split() {
        assert_eq!(
            texts("Use a tool, e.g. Pickaxe works. Done."),
            ["Use a tool, e.g. Pickaxe works.", "Done."]
        );
        assert_eq!(
            texts("Java vs. Bedrock differ."),
            ["Java vs. Bedrock differ."]
        );
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(
            texts("It broke... and then left!"),
            ["It broke... and then left!"]
        );
        assert_eq!(texts("Why? Nobody knows."), ["Why?", "Nobody knows."]);
    }

    #[test]
    fn offsets_are_byte_offsets() {
        let s = "Étape une. Deux.";
        for span in segment_sentences(s) {
            assert_eq!(&s[span.start..span.end], span.text);
        }
    }

    proptest! {
        #[test]
        fn segmentation_partitions_text(parts in prop::collection::vec(prop::sample::select(vec![
            "word", "Word", " ", "  ", "\n", ".", "!", "?", "1.21.4", "e.g.", "- ", "1. ", "é", "\t",
        ]), 0..40)) {
            let text: String = parts.concat();
            let spans = segment_sentences(&text);
            let mut last = 0;
            for s in &spans {
                prop_assert!(s.start >= last && s.start < s.end);
                prop_assert!(text[last..s.start].chars().all(char::is_whitespace));
                prop_assert_eq!(&text[s.start..s.end], s.text.as_str());
                prop_assert_eq!(s.text.trim(), s.text.as_str());
                last = s.end;
            }
            prop_assert!(text[last..].chars().all(char::is_whitespace));
        }
    }
}
