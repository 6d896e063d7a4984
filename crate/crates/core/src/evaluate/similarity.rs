//! Lexical and embedding-average cosine similarity between documents.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::text::tokens;
use crate::tfidf::{sparse_dot, TfIdf};

/// A similarity value plus a note when a fallback produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    pub warning: Option<SimilarityWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityWarning {
    /// A document had no weighted terms, so the cosine is defined as 0.
    ZeroVector,
    /// A document had no in-vocabulary tokens, so the cosine is defined as 0.
    NoVocabularyOverlap,
}

impl Score {
    fn exact(value: f64) -> Self {
        Score {
            value,
            warning: None,
        }
    }

    fn fallback(warning: SimilarityWarning) -> Self {
        Score {
            value: 0.0,
            warning: Some(warning),
        }
    }
}

/// TF-IDF fitted once over an evaluation corpus.
#[derive(Debug, Clone)]
pub struct LexicalScorer {
    model: TfIdf,
}

impl LexicalScorer {
    pub fn fit<S: AsRef<str>>(corpus: &[S]) -> Self {
        LexicalScorer {
            model: TfIdf::fit(corpus),
        }
    }

    pub fn cosine(&self, a: &str, b: &str) -> Score {
        let (va, vb) = (self.model.transform(a), self.model.transform(b));
        if va.is_empty() || vb.is_empty() {
            return Score::fallback(SimilarityWarning::ZeroVector);
        }
        Score::exact(sparse_dot(&va, &vb).clamp(0.0, 1.0))
    }
}

/// Cosine of the TF-IDF vectors of `a` and `b`, with IDF fitted on `corpus`.
pub fn tfidf_cosine<S: AsRef<str>>(a: &str, b: &str, corpus: &[S]) -> Score {
    LexicalScorer::fit(corpus).cosine(a, b)
}

#[derive(Debug, thiserror::Error)]
pub enum WordVectorError {
    #[error("word-vector table is empty")]
    EmptyTable,
    #[error("word-vector table line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("word-vector table at {path}: {message}")]
    Io { path: String, message: String },
}

/// Token to dense vector lookup, read from the plain-text word2vec format.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn new(
        dimension: usize,
        vectors: HashMap<String, Vec<f64>>,
    ) -> Result<Self, WordVectorError> {
        if vectors.is_empty() || dimension == 0 {
            return Err(WordVectorError::EmptyTable);
        }
        if let Some((word, v)) = vectors.iter().find(|(_, v)| v.len() != dimension) {
            return Err(WordVectorError::Parse {
                line: 0,
                message: format!("{word:?} has {} values", v.len()),
            });
        }
        Ok(WordVectors { dimension, vectors })
    }

    /// Parse `count dim` followed by one `token v1 .. vdim` line per word.
    /// Later duplicates of a token are ignored.
    pub fn parse(text: &str) -> Result<Self, WordVectorError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let Some((_, header)) = lines.next() else {
            return Err(WordVectorError::EmptyTable);
        };
        let err = |line: usize, message: String| WordVectorError::Parse {
            line: line + 1,
            message,
        };
        let head: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| err(0, format!("bad header: {e}")))?;
        let [count, dim] = head[..] else {
            return Err(err(0, "header must be `count dim`".into()));
        };
        let mut vectors = HashMap::with_capacity(count);
        let mut seen = 0;
        for (n, line) in lines {
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("non-blank line");
            let values: Vec<f64> = parts
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| err(n, format!("bad value: {e}")))?;
            if values.len() != dim {
                return Err(err(
                    n,
                    format!("expected {dim} values, found {}", values.len()),
                ));
            }
            vectors.entry(word.to_string()).or_insert(values);
            seen += 1;
        }
        if seen != count {
            return Err(err(
                0,
                format!("header declares {count} vectors, file holds {seen}"),
            ));
        }
        Self::new(dim, vectors)
    }

    pub fn load(path: &Path) -> Result<Self, WordVectorError> {
        let text = fs::read_to_string(path).map_err(|e| WordVectorError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Mean of the in-vocabulary token vectors, or `None` if there are none.
    pub fn document_vector(&self, text: &str) -> Option<Vec<f64>> {
        let mut sum = vec![0.0; self.dimension];
        let mut n = 0usize;
        for t in tokens(text) {
            if let Some(v) = self.vectors.get(&t) {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
                n += 1;
            }
        }
        (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
    }
}

/// Cosine of the averaged word vectors of `a` and `b`.
pub fn embedding_cosine(a: &str, b: &str, table: &WordVectors) -> Score {
    match (table.document_vector(a), table.document_vector(b)) {
        (Some(va), Some(vb)) => {
            let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
            let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Score::fallback(SimilarityWarning::ZeroVector);
            }
            Score::exact((dot / (na * nb)).clamp(-1.0, 1.0))
        }
        _ => Score::fallback(SimilarityWarning::NoVocabularyOverlap),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> WordVectors {
        WordVectors::parse("3 2\nhopper 1 0\nchest 0 1\nitem 1 1\n").unwrap()
    }

    #[test]
    fn identical_documents_score_one() {
        let corpus = ["hopper pulls items", "chest holds items", "nothing here"];
        assert!((tfidf_cosine(corpus[0], corpus[0], &corpus).value - 1.0).abs() < 1e-9);
        assert_eq!(
            tfidf_cosine("hopper pulls", "chest holds", &corpus).value,
            0.0
        );
    }

    #[test]
    fn empty_documents_are_recorded_zero() {
        let s = tfidf_cosine("", "", &["a b"]);
        assert_eq!(
            s,
            Score {
                value: 0.0,
                warning: Some(SimilarityWarning::ZeroVector)
            }
        );
    }

    // Three-document corpus worked by hand.
    // Corpus: "a b", "a c", "b b d"; N = 3.
    // df: a=2, b=2, c=1, d=1, so idf(a)=idf(b)=ln(4/3)+1, idf(c)=idf(d)=ln 2+1.
    // doc1 = (ia, ib) normalized; doc3 = (2 ib, id) normalized.
    #[test]
    fn toy_corpus_matches_hand_computation() {
        let corpus = ["a b", "a c", "b b d"];
        let i_ab = (4.0f64 / 3.0).ln() + 1.0;
        let i_cd = 2.0f64.ln() + 1.0;
        let n1 = (2.0 * i_ab * i_ab).sqrt();
        let n3 = (4.0 * i_ab * i_ab + i_cd * i_cd).sqrt();
        let expected = (i_ab * 2.0 * i_ab) / (n1 * n3);
        let got = tfidf_cosine(corpus[0], corpus[2], &corpus).value;
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn word_vector_hand_cases() {
        let t = table();
        assert_eq!(embedding_cosine("hopper", "Hopper", &t).value, 1.0);
        let v = embedding_cosine("hopper chest", "hopper", &t).value;
        assert!((v - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let oov = embedding_cosine("zombie villager", "hopper", &t);
        assert_eq!(
            oov,
            Score {
                value: 0.0,
                warning: Some(SimilarityWarning::NoVocabularyOverlap)
            }
        );
        // OOV tokens are skipped, not averaged in as zeros.
        assert_eq!(embedding_cosine("hopper zombie", "hopper", &t).value, 1.0);
    }

    #[test]
    fn table_format_is_validated() {
        assert!(matches!(
            WordVectors::parse(""),
            Err(WordVectorError::EmptyTable)
        ));
        assert!(matches!(
            WordVectors::parse("0 2\n"),
            Err(WordVectorError::EmptyTable)
        ));
        assert!(matches!(
            WordVectors::parse("1 2\nx 1\n"),
            Err(WordVectorError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            WordVectors::parse("2 2\nx 1 2\n"),
            Err(WordVectorError::Parse { .. })
        ));
        assert_eq!(table().dimension(), 2);
        assert_eq!(table().get("item"), Some(&[1.0, 1.0][..]));
    }

    proptest! {
        #[test]
        fn similarities_are_symmetric_and_bounded(
            a in "[abcdexyz ]{0,30}",
            b in "[abcdexyz ]{0,30}",
            extra in "[abcq ]{0,20}",
        ) {
            let corpus = [a.as_str(), b.as_str(), extra.as_str()];
            let ab = tfidf_cosine(&a, &b, &corpus).value;
            let ba = tfidf_cosine(&b, &a, &corpus).value;
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));

            let mut vectors = HashMap::new();
            for (i, w) in ["a", "b", "c", "d", "e", "x"].iter().enumerate() {
                vectors.insert(w.to_string(), vec![i as f64 - 2.0, 1.0, (i * i) as f64 / 7.0]);
            }
            let t = WordVectors::new(3, vectors).unwrap();
            let ab = embedding_cosine(&a, &b, &t).value;
            let ba = embedding_cosine(&b, &a, &t).value;
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
