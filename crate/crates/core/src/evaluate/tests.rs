use std::collections::HashMap;

use super::*;
use crate::model::{Provenance, Section};

fn report(key: &str, s2r: &str, ob: &str, eb: &str) -> StructuredReport {
    let mut r = StructuredReport::empty(key);
    for (kind, text) in [
        (SectionKind::StepsToReproduce, s2r),
        (SectionKind::ObservedBehavior, ob),
        (SectionKind::ExpectedBehavior, eb),
    ] {
        if !text.is_empty() {
            r.set_section(kind, Section::new(text, Provenance::HeaderMatched));
        }
    }
    r
}

#[test]
fn completeness_needs_all_three_sections() {
    let full = check_completeness(&report(
        "A",
        "place a hopper",
        "items do not move",
        "items should move",
    ));
    assert!(full.complete && full.has_s2r && full.has_ob && full.has_eb);
    let no_eb = check_completeness(&report("B", "place a hopper", "items do not move", ""));
    assert!(!no_eb.complete && !no_eb.has_eb && no_eb.has_ob);
    let thin = check_completeness(&report(
        "C",
        "place a hopper",
        "broken",
        "items should move",
    ));
    assert!(!thin.has_ob);
    let rates = completeness_rates(&[full, no_eb, thin]);
    assert_eq!(rates.reports, 3);
    assert!((rates.complete - 1.0 / 3.0).abs() < 1e-12);
    assert!((rates.eb - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(completeness_rates(&[]), CompletenessRates::default());
}

#[test]
fn completeness_table_lists_every_row() {
    let t = completeness_table(&[
        (
            "Raw",
            CompletenessRates {
                reports: 2,
                s2r: 0.5,
                ob: 1.0,
                eb: 0.0,
                complete: 0.0,
            },
        ),
        (
            "Improved",
            CompletenessRates {
                reports: 2,
                s2r: 1.0,
                ob: 1.0,
                eb: 1.0,
                complete: 1.0,
            },
        ),
    ]);
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("Component"));
    assert!(lines[4].starts_with("Complete Reports  0.0%"));
    assert!(lines[4].ends_with("100.0%"));
}

const WORDS: [&str; 16] = [
    "open", "world", "place", "hopper", "chest", "items", "stay", "move", "into", "the", "under",
    "should", "a", "game", "crash", "lag",
];

fn table() -> WordVectors {
    let mut v = HashMap::new();
    for (i, w) in WORDS.iter().enumerate() {
        let x = i as f64;
        v.insert(
            w.to_string(),
            vec![1.2 + x.sin(), 1.2 + x.cos(), 1.0 + (x * 0.7).sin()],
        );
    }
    WordVectors::new(3, v).unwrap()
}

/// Ten reports where variant b always recovers more of the reference than
/// variant a, and raw keeps almost nothing.
fn triples() -> Vec<StudyTriple> {
    (0..10)
        .map(|i| {
            let key = format!("MC-{i:02}");
            let truth = report(
                &key,
                &format!("1. open world {i}\n2. place a chest\n3. place a hopper under the chest"),
                "the items stay in the chest",
                "the items should move into the hopper",
            );
            let raw = report(&key, "", "it is broken", "");
            let a = report(
                &key,
                &format!("1. open world {i}\n2. place chest"),
                "items stay",
                "items move",
            );
            let b = report(
                &key,
                &format!("1. open world {i}\n2. place a chest\n3. place a hopper"),
                "the items stay in chest",
                "items should move into the hopper",
            );
            StudyTriple {
                key,
                raw,
                improved_a: a,
                improved_b: b,
                ground_truth: truth,
            }
        })
        .collect()
}

#[test]
fn study_has_six_corrected_tests_and_ordered_baselines() {
    let ts = triples();
    let study = run_similarity_study(&ts, &table(), &study_corpus(&ts)).unwrap();
    assert_eq!(study.tests.len(), 6);
    assert_eq!(study.average_tests.len(), 2);
    assert!((study.corrected_alpha - 0.05 / 6.0).abs() < 1e-15);
    for t in study.tests.iter().chain(&study.average_tests) {
        assert_eq!(t.significant, t.p_value <= t.corrected_alpha);
    }
    for c in Component::ROWS {
        for m in Metric::ALL {
            let raw = SimilarityStudy::mean(&study.raw, c, m);
            let a = SimilarityStudy::mean(&study.improved_a, c, m);
            let b = SimilarityStudy::mean(&study.improved_b, c, m);
            assert!(raw < a && a < b, "{c} {m}: {raw} {a} {b}");
        }
    }
    // b beats a on every report, so every pair is a positive difference.
    let s2r = study
        .test(
            Component::Section(SectionKind::StepsToReproduce),
            Metric::TfIdf,
        )
        .unwrap();
    assert_eq!(s2r.w_statistic, 0.0);
    assert!((s2r.p_value - 2.0 / 1024.0).abs() < 1e-15);
    assert_eq!(s2r.cliffs_delta, 1.0);
    assert_eq!(s2r.magnitude, Magnitude::Large);
    assert!(s2r.significant);
    assert!(study.raw.iter().all(|s| !s.warnings.is_empty()));
}

#[test]
fn study_statistics_match_direct_computation() {
    let ts = triples();
    let study = run_similarity_study(&ts, &table(), &study_corpus(&ts)).unwrap();
    for t in &study.tests {
        let xa: Vec<f64> = study
            .improved_a
            .iter()
            .map(|s| s.get(t.component, t.metric))
            .collect();
        let xb: Vec<f64> = study
            .improved_b
            .iter()
            .map(|s| s.get(t.component, t.metric))
            .collect();
        let w = wilcoxon_signed_rank(&xb, &xa).unwrap();
        assert_eq!((t.w_statistic, t.p_value), (w.w_statistic, w.p_value));
        assert_eq!(t.cliffs_delta, cliffs_delta(&xb, &xa).delta);
    }
}

#[test]
fn reference_copy_scores_one() {
    let mut ts = triples();
    for t in &mut ts {
        t.improved_b = t.ground_truth.clone();
    }
    let study = run_similarity_study(&ts, &table(), &study_corpus(&ts)).unwrap();
    for s in &study.improved_b {
        for c in Component::ROWS {
            for m in Metric::ALL {
                assert!((s.get(c, m) - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn study_rejects_small_or_degenerate_inputs() {
    let ts = triples();
    assert!(matches!(
        run_similarity_study(&ts[..4], &table(), &study_corpus(&ts)),
        Err(StudyError::TooFewTriples { got: 4, .. })
    ));
    let mut same = triples();
    for t in &mut same {
        t.improved_b = t.improved_a.clone();
    }
    assert!(matches!(
        run_similarity_study(&same, &table(), &study_corpus(&same)),
        Err(StudyError::Stats {
            source: StatsError::TooFewPairs(0),
            ..
        })
    ));
}

#[test]
fn study_output_is_sorted_and_tabulated() {
    let mut ts = triples();
    ts.reverse();
    let study = run_similarity_study(&ts, &table(), &study_corpus(&ts)).unwrap();
    let keys: Vec<&str> = study.raw.iter().map(|s| s.key.as_str()).collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
    let text = similarity_table(&study, ["Raw", "A", "B"]);
    assert_eq!(text.lines().count(), 1 + 8 + 1);
    assert!(text.contains("Avg."));
    assert!(text.ends_with("Bonferroni alpha = 0.0083 (6 tests)\n"));
}

#[test]
fn kappa_table_rows() {
    let a = [Some("x"), Some("y")];
    let mut r = cohens_kappa(&a, &a).unwrap();
    r.label_type = Some(LabelType::OB);
    let t = kappa_table(&[r]);
    assert_eq!(t.lines().nth(1).unwrap(), "OB     1.000  100.0%     2");
}
