//! Paired significance testing and effect sizes.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

/// Smallest number of non-zero differences the signed-rank test accepts.
pub const MIN_PAIRS: usize = 5;
/// Largest sample for which the exact null distribution is enumerated.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// min(W+, W-) over the non-zero differences.
    pub w_statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub method: PMethod,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least {MIN_PAIRS} non-zero differences, found {0}")]
    TooFewPairs(usize),
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Ranks of `values` (1-based), ties sharing the average rank, doubled so
/// every rank is an integer.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Average of ranks i+1..=j+1, times two.
        let r = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided signed-rank test on `a[i] - b[i]`, exact for up to
/// [`EXACT_MAX_N`] non-zero differences.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon, StatsError> {
    wilcoxon_with(a, b, None)
}

/// As [`wilcoxon_signed_rank`], optionally forcing the p-value method.
pub fn wilcoxon_with(
    a: &[f64],
    b: &[f64],
    method: Option<PMethod>,
) -> Result<Wilcoxon, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n < MIN_PAIRS {
        return Err(StatsError::TooFewPairs(n));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let total: u64 = ranks.iter().sum();
    let w_plus: u64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let w_minus = total - w_plus;
    let method = method.unwrap_or(if n <= EXACT_MAX_N {
        PMethod::Exact
    } else {
        PMethod::Normal
    });
    let p_value = match method {
        PMethod::Exact => exact_p(&ranks, w_plus),
        PMethod::Normal => normal_p(&ranks, w_plus),
    };
    Ok(Wilcoxon {
        w_statistic: w_plus.min(w_minus) as f64 / 2.0,
        p_value,
        n,
        method,
    })
}

/// Null distribution of the doubled W+ by subset-sum counting.
fn exact_p(ranks: &[u64], w_plus: u64) -> f64 {
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(ranks.len() as i32);
    let lower: u64 = counts[..=w_plus as usize].iter().sum();
    let upper: u64 = counts[w_plus as usize..].iter().sum();
    (2.0 * lower.min(upper) as f64 / all).min(1.0)
}

/// Normal approximation with tie and continuity corrections.
fn normal_p(ranks: &[u64], w_plus: u64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    for group in sorted.chunk_by(|x, y| x == y) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus as f64 / 2.0 - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Magnitude {
    Negligible,
    Small,
    Medium,
    Large,
}

impl Magnitude {
    pub fn of(delta: f64) -> Self {
        match delta.abs() {
            d if d < 0.147 => Magnitude::Negligible,
            d if d < 0.33 => Magnitude::Small,
            d if d < 0.474 => Magnitude::Medium,
            _ => Magnitude::Large,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CliffsDelta {
    pub delta: f64,
    pub magnitude: Magnitude,
}

/// Dominance of `a` over `b` across all cross pairs.
///
/// # Panics
/// If either group is empty.
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> CliffsDelta {
    assert!(
        !a.is_empty() && !b.is_empty(),
        "cliffs_delta needs two non-empty groups"
    );
    let mut sorted_b = b.to_vec();
    sorted_b.sort_by(f64::total_cmp);
    let mut net: i64 = 0;
    for &x in a {
        let below = sorted_b.partition_point(|&y| y < x) as i64;
        let above = (sorted_b.len() - sorted_b.partition_point(|&y| y <= x)) as i64;
        net += below - above;
    }
    let delta = net as f64 / (a.len() * b.len()) as f64;
    CliffsDelta {
        delta,
        magnitude: Magnitude::of(delta),
    }
}

/// Per-test significance level for `tests` comparisons.
pub fn bonferroni(alpha: f64, tests: usize) -> f64 {
    alpha / tests as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Two-sided p by walking all 2^n sign assignments of the average ranks.
    fn enumeration_p(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a
            .iter()
            .zip(b)
            .map(|(x, y)| x - y)
            .filter(|d| *d != 0.0)
            .collect();
        let n = d.len();
        let ranks: Vec<f64> = d
            .iter()
            .map(|x| {
                let less = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
                let equal = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect();
        let total: f64 = ranks.iter().sum();
        let observed: f64 = ranks
            .iter()
            .zip(&d)
            .filter(|(_, x)| **x > 0.0)
            .map(|(r, _)| r)
            .sum();
        let dev = (observed - total / 2.0).abs();
        let mut hits = 0u64;
        for mask in 0u64..1 << n {
            let w: f64 = (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| ranks[i])
                .sum();
            if (w - total / 2.0).abs() >= dev - 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn identical_samples_have_no_pairs() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(
            wilcoxon_signed_rank(&a, &a),
            Err(StatsError::TooFewPairs(0))
        );
        assert_eq!(
            wilcoxon_signed_rank(&a, &a[..3]),
            Err(StatsError::LengthMismatch(6, 3))
        );
    }

    #[test]
    fn six_pairs_match_enumeration() {
        let a = [9.0, 7.0, 8.0, 6.5, 4.0, 5.5];
        let b = [5.0, 6.0, 3.0, 7.0, 2.0, 5.0];
        let w = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(w.method, PMethod::Exact);
        assert!((w.p_value - enumeration_p(&a, &b)).abs() < 1e-12);
        // Differences 4 1 5 -0.5 2 0.5: ranks 5 3 6 1.5 4 1.5, W- = 1.5.
        assert_eq!(w.w_statistic, 1.5);
    }

    #[test]
    fn all_positive_six_pairs() {
        let a = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let b = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let w = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(w.w_statistic, 0.0);
        assert!((w.p_value - 2.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn normal_approximation_tracks_exact_at_twenty() {
        let a: Vec<f64> = (0..40)
            .map(|i| ((i * 37) % 23) as f64 / 10.0 + 0.15)
            .collect();
        let b: Vec<f64> = (0..40).map(|i| ((i * 11) % 19) as f64 / 10.0).collect();
        let big = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(big.method, PMethod::Normal);
        assert!(big.p_value > 0.0 && big.p_value <= 1.0);
        let exact = wilcoxon_with(&a[..20], &b[..20], Some(PMethod::Exact)).unwrap();
        let approx = wilcoxon_with(&a[..20], &b[..20], Some(PMethod::Normal)).unwrap();
        assert!(
            (exact.p_value - approx.p_value).abs() < 0.005,
            "{} vs {}",
            exact.p_value,
            approx.p_value
        );
    }

    #[test]
    fn cliffs_delta_cases() {
        assert_eq!(
            cliffs_delta(&[5.0, 6.0], &[1.0, 2.0, 3.0]),
            CliffsDelta {
                delta: 1.0,
                magnitude: Magnitude::Large
            }
        );
        assert_eq!(cliffs_delta(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).delta, 0.0);
        assert_eq!(cliffs_delta(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).delta, 0.0);
        assert_eq!(Magnitude::of(0.146), Magnitude::Negligible);
        assert_eq!(Magnitude::of(-0.147), Magnitude::Small);
        assert_eq!(Magnitude::of(0.33), Magnitude::Medium);
        assert_eq!(Magnitude::of(0.474), Magnitude::Large);
    }

    #[test]
    fn bonferroni_cases() {
        assert!((bonferroni(0.05, 6) - 0.008_333_333_333_333_333).abs() < 1e-15);
        assert_eq!(format!("{:.4}", bonferroni(0.05, 6)), "0.0083");
        assert_eq!(bonferroni(0.05, 1), 0.05);
        assert_eq!(bonferroni(0.01, 4), 0.0025);
    }

    proptest! {
        #[test]
        fn exact_p_matches_enumeration(pairs in prop::collection::vec((0u8..6, 0u8..6), 5..=12)) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            match wilcoxon_signed_rank(&a, &b) {
                Ok(w) => {
                    prop_assert!(w.p_value > 0.0 && w.p_value <= 1.0);
                    prop_assert!((w.p_value - enumeration_p(&a, &b)).abs() < 1e-12);
                    let mut rev: Vec<usize> = (0..a.len()).collect();
                    rev.reverse();
                    let ra: Vec<f64> = rev.iter().map(|&i| a[i]).collect();
                    let rb: Vec<f64> = rev.iter().map(|&i| b[i]).collect();
                    prop_assert_eq!(wilcoxon_signed_rank(&ra, &rb).unwrap(), w);
                }
                Err(StatsError::TooFewPairs(n)) => prop_assert!(n < MIN_PAIRS),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn cliffs_delta_is_brute_force_and_antisymmetric(
            a in prop::collection::vec(0i32..10, 1..30),
            b in prop::collection::vec(0i32..10, 1..30),
        ) {
            let fa: Vec<f64> = a.iter().map(|&x| x as f64).collect();
            let fb: Vec<f64> = b.iter().map(|&x| x as f64).collect();
            let mut net = 0i64;
            for x in &a {
                for y in &b {
                    net += (x > y) as i64 - (x < y) as i64;
                }
            }
            let d = cliffs_delta(&fa, &fb).delta;
            prop_assert_eq!(d, net as f64 / (a.len() * b.len()) as f64);
            prop_assert_eq!(cliffs_delta(&fb, &fa).delta, -d);
        }
    }
}
