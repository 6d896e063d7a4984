//! Stratified proportional sampling by resolution, and the sampling error bound.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::model::RawBugReport;

/// Stratum name for reports without a resolution.
pub const OPEN_STRATUM: &str = "Null (Open)";

/// Resolutions where a clearer report most changes the developer/reporter exchange.
pub const TARGET_RESOLUTIONS: [&str; 3] = ["Awaiting Response", "Cannot Reproduce", "Incomplete"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumSpec {
    pub resolution_name: String,
    pub population_count: usize,
    pub sample_count: usize,
}

/// How fractional stratum quotas are turned into whole counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Apportionment {
    /// Greatest-divisor (D'Hondt) allocation. Reproduces the published resolution table.
    #[default]
    Jefferson,
    /// Hamilton's method: floors, then the largest fractional remainders.
    LargestRemainder,
}

pub fn stratum_of(report: &RawBugReport) -> String {
    match report.resolution.as_deref().map(str::trim) {
        None | Some("") => OPEN_STRATUM.to_string(),
        Some(r) if r.eq_ignore_ascii_case("null") || r.eq_ignore_ascii_case("unresolved") => {
            OPEN_STRATUM.to_string()
        }
        Some(r) => r.to_string(),
    }
}

/// Strata in table order: population count descending, then name.
fn order_strata(counts: &BTreeMap<String, usize>) -> Vec<(String, usize)> {
    let mut strata: Vec<(String, usize)> = counts.iter().map(|(k, v)| (k.clone(), *v)).collect();
    strata.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    strata
}

/// Whole-number allocation of `total` across `counts` (given in table order).
pub fn apportion(counts: &[usize], total: usize, method: Apportionment) -> Vec<usize> {
    let population: usize = counts.iter().sum();
    if population == 0 {
        return vec![0; counts.len()];
    }
    match method {
        Apportionment::LargestRemainder => {
            let mut alloc: Vec<usize> = counts.iter().map(|c| c * total / population).collect();
            let assigned: usize = alloc.iter().sum();
            let mut order: Vec<usize> = (0..counts.len()).collect();
            // exact integer remainders; ties go to the earlier (larger) stratum
            order.sort_by(|&a, &b| {
                ((counts[b] * total) % population)
                    .cmp(&((counts[a] * total) % population))
                    .then(a.cmp(&b))
            });
            for &i in order.iter().take(total - assigned) {
                alloc[i] += 1;
            }
            alloc
        }
        Apportionment::Jefferson => {
            let mut alloc = vec![0usize; counts.len()];
            for _ in 0..total {
                // argmax of counts[i] / (alloc[i] + 1), compared by cross-multiplication
                let mut best: Option<usize> = None;
                for i in 0..counts.len() {
                    if alloc[i] >= counts[i] {
                        continue;
                    }
                    best = match best {
                        None => Some(i),
                        Some(j) => {
                            let lhs = counts[i] as u128 * (alloc[j] as u128 + 1);
                            let rhs = counts[j] as u128 * (alloc[i] as u128 + 1);
                            if lhs > rhs {
                                Some(i)
                            } else {
                                Some(j)
                            }
                        }
                    };
                }
                match best {
                    Some(i) => alloc[i] += 1,
                    None => break,
                }
            }
            alloc
        }
    }
}

/// Draw a stratified proportional sample.
///
/// Strata are resolution names; per-stratum counts come from [`apportion`]
/// and sum to `total_sample`. Members are chosen uniformly within each stratum
/// from a ChaCha8 stream seeded with `seed`. The returned reports keep their
/// population order.
pub fn stratified_sample(
    population: &[RawBugReport],
    total_sample: usize,
    seed: u64,
    method: Apportionment,
) -> Result<(Vec<RawBugReport>, Vec<StratumSpec>), IngestError> {
    if population.is_empty() {
        return Err(IngestError::EmptyPopulation);
    }
    if total_sample == 0 || total_sample > population.len() {
        return Err(IngestError::InvalidSample(format!(
            "sample size {total_sample} must be in 1..={}",
            population.len()
        )));
    }
    let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in population.iter().enumerate() {
        members.entry(stratum_of(r)).or_default().push(i);
    }
    let counts: BTreeMap<String, usize> =
        members.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let strata = order_strata(&counts);
    let alloc = apportion(
        &strata.iter().map(|s| s.1).collect::<Vec<_>>(),
        total_sample,
        method,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(total_sample);
    let mut specs = Vec::with_capacity(strata.len());
    for ((name, count), take) in strata.into_iter().zip(alloc) {
        let idx = &members[&name];
        for pick in index::sample(&mut rng, idx.len(), take) {
            chosen.push(idx[pick]);
        }
        specs.push(StratumSpec {
            resolution_name: name,
            population_count: count,
            sample_count: take,
        });
    }
    chosen.sort_unstable();
    Ok((
        chosen.into_iter().map(|i| population[i].clone()).collect(),
        specs,
    ))
}

/// Per-stratum counts only, for when the population is known just by its table.
pub fn allocate_strata(
    counts: &[(String, usize)],
    total_sample: usize,
    method: Apportionment,
) -> Vec<StratumSpec> {
    let map: BTreeMap<String, usize> = counts.iter().cloned().collect();
    let strata = order_strata(&map);
    let alloc = apportion(
        &strata.iter().map(|s| s.1).collect::<Vec<_>>(),
        total_sample,
        method,
    );
    strata
        .into_iter()
        .zip(alloc)
        .map(
            |((resolution_name, population_count), sample_count)| StratumSpec {
                resolution_name,
                population_count,
                sample_count,
            },
        )
        .collect()
}

/// Margin of error for a proportion with finite-population correction:
/// `z · sqrt(p(1−p)/n) · sqrt((N−n)/(N−1))`.
pub fn margin_of_error(
    population_size: u64,
    sample_size: u64,
    proportion: f64,
    confidence_z: f64,
) -> f64 {
    assert!(
        sample_size > 0 && sample_size <= population_size,
        "need 0 < n <= N"
    );
    if sample_size == population_size {
        return 0.0;
    }
    let n = sample_size as f64;
    let big_n = population_size as f64;
    let standard_error = (proportion * (1.0 - proportion) / n).sqrt();
    let fpc = ((big_n - n) / (big_n - 1.0)).sqrt();
    confidence_z * standard_error * fpc
}

/// Keep reports whose resolution is one of `names` (case-insensitive), preserving order.
pub fn filter_resolutions(sample: &[RawBugReport], names: &[&str]) -> Vec<RawBugReport> {
    sample
        .iter()
        .filter(|r| {
            r.resolution
                .as_deref()
                .is_some_and(|res| names.iter().any(|n| n.eq_ignore_ascii_case(res.trim())))
        })
        .cloned()
        .collect()
}

/// [`filter_resolutions`] with the default target set.
pub fn filter_target_resolutions(sample: &[RawBugReport]) -> Vec<RawBugReport> {
    filter_resolutions(sample, &TARGET_RESOLUTIONS)
}

/// One line of the sample manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ManifestRecord {
    Header {
        seed: u64,
        total: usize,
        method: Apportionment,
        strata: Vec<StratumSpec>,
    },
    Member {
        key: String,
        stratum: String,
    },
}

pub fn manifest(
    sample: &[RawBugReport],
    strata: &[StratumSpec],
    seed: u64,
    method: Apportionment,
) -> Vec<ManifestRecord> {
    let total = strata.iter().map(|s| s.sample_count).sum();
    std::iter::once(ManifestRecord::Header {
        seed,
        total,
        method,
        strata: strata.to_vec(),
    })
    .chain(sample.iter().map(|r| ManifestRecord::Member {
        key: r.key.clone(),
        stratum: stratum_of(r),
    }))
    .collect()
}
