//! Evaluation: structural completeness, similarity to ground truth,
//! paired significance tests and inter-rater agreement.

pub mod kappa;
pub mod similarity;
pub mod stats;

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

pub use kappa::{
    cohens_kappa, cohens_kappa_over, kappa_from_confusion, kappa_study, KappaError, KappaResult,
    LabelType, ManualLabel, ReportVersion,
};
pub use similarity::{
    embedding_cosine, tfidf_cosine, LexicalScorer, Score, SimilarityWarning, WordVectors,
};
pub use stats::{
    bonferroni, cliffs_delta, wilcoxon_signed_rank, wilcoxon_with, CliffsDelta, Magnitude, PMethod,
    StatsError, Wilcoxon,
};

use crate::model::{SectionKind, StructuredReport};
use crate::text::is_substantive;

/// Family-wise significance level before correction.
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletenessResult {
    pub key: String,
    pub has_s2r: bool,
    pub has_ob: bool,
    pub has_eb: bool,
    pub complete: bool,
}

/// A required section is present when it has substantive content.
pub fn check_completeness(report: &StructuredReport) -> CompletenessResult {
    let has = |k| is_substantive(report.content(k));
    let (has_s2r, has_ob, has_eb) = (
        has(SectionKind::StepsToReproduce),
        has(SectionKind::ObservedBehavior),
        has(SectionKind::ExpectedBehavior),
    );
    CompletenessResult {
        key: report.key.clone(),
        has_s2r,
        has_ob,
        has_eb,
        complete: has_s2r && has_ob && has_eb,
    }
}

/// Share of reports with each section and with all three.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CompletenessRates {
    pub reports: usize,
    pub s2r: f64,
    pub ob: f64,
    pub eb: f64,
    pub complete: f64,
}

pub fn completeness_rates(results: &[CompletenessResult]) -> CompletenessRates {
    if results.is_empty() {
        return CompletenessRates::default();
    }
    let n = results.len() as f64;
    let rate =
        |f: fn(&CompletenessResult) -> bool| results.iter().filter(|r| f(r)).count() as f64 / n;
    CompletenessRates {
        reports: results.len(),
        s2r: rate(|r| r.has_s2r),
        ob: rate(|r| r.has_ob),
        eb: rate(|r| r.has_eb),
        complete: rate(|r| r.complete),
    }
}

/// Completeness table with one column per labelled corpus.
pub fn completeness_table(columns: &[(&str, CompletenessRates)]) -> String {
    let mut rows = vec![vec!["Component".to_string()]];
    rows[0].extend(columns.iter().map(|(name, _)| name.to_string()));
    type Row = (&'static str, fn(&CompletenessRates) -> f64);
    let lines: [Row; 4] = [
        ("S2R", |r| r.s2r),
        ("OB", |r| r.ob),
        ("EB", |r| r.eb),
        ("Complete Reports", |r| r.complete),
    ];
    for (label, get) in lines {
        let mut row = vec![label.to_string()];
        row.extend(
            columns
                .iter()
                .map(|(_, r)| format!("{:.1}%", 100.0 * get(r))),
        );
        rows.push(row);
    }
    align(&rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Section(SectionKind),
    Average,
}

impl Component {
    pub const ROWS: [Component; 4] = [
        Component::Section(SectionKind::StepsToReproduce),
        Component::Section(SectionKind::ObservedBehavior),
        Component::Section(SectionKind::ExpectedBehavior),
        Component::Average,
    ];
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Section(k) => f.write_str(k.abbreviation()),
            Component::Average => f.write_str("Avg."),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    TfIdf,
    Embedding,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::TfIdf, Metric::Embedding];
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::TfIdf => "TF-IDF",
            Metric::Embedding => "Embedding",
        })
    }
}

/// One report in three versions plus the reference it is judged against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTriple {
    pub key: String,
    pub raw: StructuredReport,
    pub improved_a: StructuredReport,
    pub improved_b: StructuredReport,
    pub ground_truth: StructuredReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PairScores {
    pub tfidf_cosine: f64,
    pub embedding_cosine: f64,
}

impl PairScores {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::TfIdf => self.tfidf_cosine,
            Metric::Embedding => self.embedding_cosine,
        }
    }
}

/// Scores of one version of one report against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScores {
    pub key: String,
    pub s2r: PairScores,
    pub ob: PairScores,
    pub eb: PairScores,
    pub average: PairScores,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SimilarityScores {
    pub fn get(&self, component: Component, metric: Metric) -> f64 {
        let pair = match component {
            Component::Section(SectionKind::StepsToReproduce) => &self.s2r,
            Component::Section(SectionKind::ObservedBehavior) => &self.ob,
            Component::Section(SectionKind::ExpectedBehavior) => &self.eb,
            Component::Section(SectionKind::Environment) => return f64::NAN,
            Component::Average => &self.average,
        };
        pair.get(metric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub component: Component,
    pub metric: Metric,
    pub w_statistic: f64,
    pub p_value: f64,
    pub corrected_alpha: f64,
    pub significant: bool,
    pub cliffs_delta: f64,
    pub magnitude: Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStudy {
    pub raw: Vec<SimilarityScores>,
    pub improved_a: Vec<SimilarityScores>,
    pub improved_b: Vec<SimilarityScores>,
    /// Variant b against variant a for each section and metric.
    pub tests: Vec<StatTestResult>,
    /// The same comparison on the per-report mean of the three sections;
    /// not counted in the correction.
    pub average_tests: Vec<StatTestResult>,
    pub corrected_alpha: f64,
}

impl SimilarityStudy {
    /// Mean score of one version over all reports.
    pub fn mean(scores: &[SimilarityScores], component: Component, metric: Metric) -> f64 {
        scores.iter().map(|s| s.get(component, metric)).sum::<f64>() / scores.len().max(1) as f64
    }

    pub fn test(&self, component: Component, metric: Metric) -> Option<&StatTestResult> {
        self.tests
            .iter()
            .chain(&self.average_tests)
            .find(|t| t.component == component && t.metric == metric)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("a study needs at least {min} triples, got {got}")]
    TooFewTriples { min: usize, got: usize },
    #[error("{component} {metric}: {source}")]
    Stats {
        component: Component,
        metric: Metric,
        source: StatsError,
    },
}

pub const MIN_TRIPLES: usize = 5;

/// Every required section text of every version in the study, for fitting IDF.
pub fn study_corpus(triples: &[StudyTriple]) -> Vec<String> {
    let mut corpus = Vec::new();
    for t in triples {
        for r in [&t.raw, &t.improved_a, &t.improved_b, &t.ground_truth] {
            corpus.extend(
                SectionKind::REQUIRED
                    .iter()
                    .map(|&k| r.content(k).to_string()),
            );
        }
    }
    corpus
}

fn score_version(
    key: &str,
    version: &StructuredReport,
    truth: &StructuredReport,
    lexical: &LexicalScorer,
    table: &WordVectors,
) -> SimilarityScores {
    let mut warnings = Vec::new();
    let mut pairs = [PairScores::default(); 3];
    for (slot, kind) in pairs.iter_mut().zip(SectionKind::REQUIRED) {
        let (a, b) = (version.content(kind), truth.content(kind));
        let t = lexical.cosine(a, b);
        let e = embedding_cosine(a, b, table);
        for (metric, w) in [(Metric::TfIdf, t.warning), (Metric::Embedding, e.warning)] {
            if let Some(w) = w {
                warnings.push(format!("{} {metric}: {w:?}, scored 0", kind.abbreviation()));
            }
        }
        *slot = PairScores {
            tfidf_cosine: t.value,
            embedding_cosine: e.value,
        };
    }
    let mean = |f: fn(&PairScores) -> f64| pairs.iter().map(f).sum::<f64>() / 3.0;
    SimilarityScores {
        key: key.to_string(),
        s2r: pairs[0],
        ob: pairs[1],
        eb: pairs[2],
        average: PairScores {
            tfidf_cosine: mean(|p| p.tfidf_cosine),
            embedding_cosine: mean(|p| p.embedding_cosine),
        },
        warnings,
    }
}

fn paired_test(
    a: &[SimilarityScores],
    b: &[SimilarityScores],
    component: Component,
    metric: Metric,
    alpha: f64,
) -> Result<StatTestResult, StudyError> {
    let xa: Vec<f64> = a.iter().map(|s| s.get(component, metric)).collect();
    let xb: Vec<f64> = b.iter().map(|s| s.get(component, metric)).collect();
    let w = wilcoxon_signed_rank(&xb, &xa).map_err(|source| StudyError::Stats {
        component,
        metric,
        source,
    })?;
    let d = cliffs_delta(&xb, &xa);
    Ok(StatTestResult {
        component,
        metric,
        w_statistic: w.w_statistic,
        p_value: w.p_value,
        corrected_alpha: alpha,
        significant: w.p_value <= alpha,
        cliffs_delta: d.delta,
        magnitude: d.magnitude,
    })
}

/// Score raw and both improved versions against ground truth and compare
/// variant b with variant a, one test per (section, metric).
///
/// Output rows are sorted by key. Scoring is spread over threads.
pub fn run_similarity_study(
    triples: &[StudyTriple],
    table: &WordVectors,
    corpus: &[String],
) -> Result<SimilarityStudy, StudyError> {
    if triples.len() < MIN_TRIPLES {
        return Err(StudyError::TooFewTriples {
            min: MIN_TRIPLES,
            got: triples.len(),
        });
    }
    let lexical = LexicalScorer::fit(corpus);
    let mut sorted: Vec<&StudyTriple> = triples.iter().collect();
    sorted.sort_by(|x, y| x.key.cmp(&y.key));
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(sorted.len());
    let per = sorted.len().div_ceil(workers);
    let scored: Vec<[SimilarityScores; 3]> = std::thread::scope(|s| {
        let handles: Vec<_> = sorted
            .chunks(per)
            .map(|chunk| {
                let lexical = &lexical;
                s.spawn(move || {
                    chunk
                        .iter()
                        .map(|t| {
                            [&t.raw, &t.improved_a, &t.improved_b]
                                .map(|v| score_version(&t.key, v, &t.ground_truth, lexical, table))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scoring thread"))
            .collect()
    });
    let (mut raw, mut improved_a, mut improved_b) = (Vec::new(), Vec::new(), Vec::new());
    for [r, a, b] in scored {
        raw.push(r);
        improved_a.push(a);
        improved_b.push(b);
    }

    let sections = &Component::ROWS[..3];
    let corrected_alpha = bonferroni(DEFAULT_ALPHA, sections.len() * Metric::ALL.len());
    let mut tests = Vec::new();
    for &component in sections {
        for metric in Metric::ALL {
            tests.push(paired_test(
                &improved_a,
                &improved_b,
                component,
                metric,
                corrected_alpha,
            )?);
        }
    }
    let average_tests = Metric::ALL
        .into_iter()
        .map(|m| {
            paired_test(
                &improved_a,
                &improved_b,
                Component::Average,
                m,
                corrected_alpha,
            )
        })
        .collect::<Result<_, _>>()?;
    Ok(SimilarityStudy {
        raw,
        improved_a,
        improved_b,
        tests,
        average_tests,
        corrected_alpha,
    })
}

/// Similarity table: mean scores per version, then p and delta of b vs a.
pub fn similarity_table(study: &SimilarityStudy, names: [&str; 3]) -> String {
    let mut rows = vec![vec!["Component".to_string(), "Metric".to_string()]];
    rows[0].extend(names.iter().map(|n| n.to_string()));
    rows[0].extend(["p".to_string(), "delta".to_string(), "Sig.".to_string()]);
    for component in Component::ROWS {
        for metric in Metric::ALL {
            let mut row = vec![component.to_string(), metric.to_string()];
            for version in [&study.raw, &study.improved_a, &study.improved_b] {
                row.push(format!(
                    "{:.1}%",
                    100.0 * SimilarityStudy::mean(version, component, metric)
                ));
            }
            match study.test(component, metric) {
                Some(t) => row.extend([
                    format!("{:.4}", t.p_value),
                    format!("{:.3} ({:?})", t.cliffs_delta, t.magnitude),
                    if t.significant { "yes" } else { "no" }.to_string(),
                ]),
                None => row.extend(["-".into(), "-".into(), "-".into()]),
            }
            rows.push(row);
        }
    }
    let mut out = align(&rows);
    let _ = writeln!(
        out,
        "Bonferroni alpha = {:.4} ({} tests)",
        study.corrected_alpha,
        study.tests.len()
    );
    out
}

/// Agreement table: one row per label type.
pub fn kappa_table(results: &[KappaResult]) -> String {
    let mut rows = vec![vec![
        "Label".to_string(),
        "Kappa".to_string(),
        "Agreement".to_string(),
        "Items".to_string(),
    ]];
    for r in results {
        let items: u64 = r.confusion.iter().flatten().sum();
        rows.push(vec![
            r.label_type.map_or("-".to_string(), |l| format!("{l:?}")),
            format!("{:.3}", r.kappa),
            format!("{:.1}%", 100.0 * r.observed_agreement),
            items.to_string(),
        ]);
    }
    align(&rows)
}

/// Left-aligned columns separated by two spaces.
pub fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests;
