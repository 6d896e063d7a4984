//! Stage commands. Each reads its upstream artifact from the output
//! directory, writes its own, and reports counts.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use brqual::detect::{train_classifier, ClassifierModel, Detector, LabeledExample, TrainConfig};
use brqual::evaluate::{
    check_completeness, completeness_rates, completeness_table, kappa_study, kappa_table,
    run_similarity_study, similarity_table, study_corpus, CompletenessRates, CompletenessResult,
    KappaResult, ManualLabel, ReportVersion, SimilarityStudy, StudyTriple, WordVectors,
};
use brqual::gateway::{Gateway, ProviderError, ProviderMode, Served};
use brqual::improve::{improve_report, Ablation, ImproveContext, ImproveError, ImprovedReport};
use brqual::ingest::sample::{filter_resolutions, manifest};
use brqual::ingest::tracker::parse_timestamp;
use brqual::ingest::{
    fetch_reports, margin_of_error, stratified_sample, FetchQuery, FixtureTracker, HttpTracker,
    SearchTransport,
};
use brqual::jsonl::{self, JsonlError};
use brqual::model::{DetectionResult, RawBugReport, StructuredReport, Verdict};
use brqual::preprocess::{PreprocessOutput, Preprocessor, RuleSet};
use brqual::prompts::PromptCatalog;
use brqual::rag::{chunk_text, ingest_knowledge, KnowledgeDocument, VectorIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::PipelineConfig;
use crate::{AblationArgs, Command};

pub const RAW_FILE: &str = "raw.jsonl";
pub const SAMPLE_FILE: &str = "sample.jsonl";
pub const SAMPLE_MANIFEST_FILE: &str = "sample_manifest.jsonl";
pub const PREPROCESSED_FILE: &str = "preprocessed.jsonl";
pub const DETECTED_FILE: &str = "detected.jsonl";
pub const IMPROVED_FILE: &str = "improved.jsonl";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const EVALUATION_TABLES_FILE: &str = "evaluation.txt";
pub const ABLATION_DIR: &str = "ablation";
pub const ABLATION_TABLE_FILE: &str = "ablation.txt";

/// z for a 95% confidence level.
const Z_95: f64 = 1.96;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    MissingArtifact(String),
    #[error("{0}")]
    Provider(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Data(_) => 1,
            CliError::MissingArtifact(_) => 2,
            CliError::Provider(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingArtifact(_) => "missing_artifact",
            CliError::Provider(_) => "provider",
            CliError::Data(_) => "data",
        }
    }
}

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::NotConfigured(m) => CliError::Config(m),
            e => CliError::Provider(e.to_string()),
        }
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        CliError::Data(e.to_string())
    }
}

/// What a command did: counts for the summary line, optional table text and notes.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub counts: BTreeMap<String, Value>,
    pub text: Vec<String>,
    pub notes: Vec<String>,
}

impl Outcome {
    fn count(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.counts.insert(key.to_string(), value.into());
        self
    }
}

/// Detection output: the report it was computed on plus the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedReport {
    pub report: StructuredReport,
    pub detection: DetectionResult,
}

pub fn run(command: &Command, config: &PipelineConfig, dry_run: bool) -> Result<Outcome, CliError> {
    match command {
        Command::Fetch => fetch(config, dry_run),
        Command::Sample => sample(config, dry_run),
        Command::Preprocess => preprocess(config, dry_run),
        Command::Detect => detect(config, dry_run),
        Command::Improve(flags) => improve(config, *flags, dry_run),
        Command::Evaluate => evaluate(config, dry_run),
        Command::Ablate => ablate(config, dry_run),
        Command::TrainDetector => train_detector(config, dry_run),
        Command::BuildKb => build_kb(config, dry_run),
    }
}

fn out_path(config: &PipelineConfig, name: &str) -> PathBuf {
    config.paths.out_dir.join(name)
}

fn read_artifact<T: serde::de::DeserializeOwned>(
    path: &Path,
    producer: &str,
) -> Result<Vec<T>, CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!(
            "{} not found; run `brqual {producer}` first",
            path.display()
        )));
    }
    Ok(jsonl::read(path)?)
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("{key} is not set")))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn gateway(config: &PipelineConfig) -> Result<Gateway, CliError> {
    if config.provider.mode == ProviderMode::Replay {
        let path = required(
            &config.provider.cache_path,
            "provider.cache_path (replay mode)",
        )?;
        if !path.exists() {
            return Err(CliError::MissingArtifact(format!(
                "replay cache {} not found",
                path.display()
            )));
        }
    }
    Ok(Gateway::from_config(config.provider.clone())?)
}

/// Replay misses mean the stage ran on fallbacks; refuse to write its output.
fn check_misses(gateway: &Gateway) -> Result<(), CliError> {
    let misses: Vec<_> = gateway
        .call_log()
        .into_iter()
        .filter(|r| r.served == Served::Miss)
        .collect();
    match misses.first() {
        None => Ok(()),
        Some(first) => Err(CliError::Provider(format!(
            "{} provider request(s) missed the replay cache (first: {:?} {} {})",
            misses.len(),
            first.kind,
            first.prompt_id.as_deref().unwrap_or("-"),
            first.request_hash
        ))),
    }
}

fn calls_made(gateway: &Gateway) -> usize {
    gateway.call_log().len()
}

fn worker_pool(config: &PipelineConfig) -> Result<rayon::ThreadPool, CliError> {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    rayon::ThreadPoolBuilder::new()
        .num_threads(cpus.min(config.provider.max_in_flight.max(1)))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn catalog(config: &PipelineConfig) -> Result<PromptCatalog, CliError> {
    match &config.improve.catalog_path {
        Some(dir) => PromptCatalog::load_dir(dir).map_err(|e| CliError::Config(e.to_string())),
        None => Ok(PromptCatalog::builtin()),
    }
}

fn timed<T>(key: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    log::info!("{key}: {:.1} ms", start.elapsed().as_secs_f64() * 1000.0);
    out
}

fn fetch(config: &PipelineConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let t = &config.tracker;
    let mut query = FetchQuery::new(t.project.clone(), t.max_results);
    query.page_size = t.page_size;
    query.resolution_filter = t.resolutions.clone();
    if let Some(after) = &t.created_after {
        query.created_after = Some(parse_timestamp(after).ok_or_else(|| {
            CliError::Config(format!(
                "tracker.created_after {after:?} is not a timestamp"
            ))
        })?);
    }
    let source = match &t.fixtures_dir {
        Some(dir) => dir.display().to_string(),
        None if config.provider.mode == ProviderMode::Replay => {
            return Err(CliError::Config(
                "fetching from the live tracker is not allowed in replay mode; set tracker.fixtures_dir or provider.mode".into(),
            ))
        }
        None => t.base_url.clone(),
    };
    if dry_run {
        let pages = t.max_results.div_ceil(t.page_size.max(1));
        return Ok(Outcome::default()
            .count("max_results", t.max_results)
            .count("max_pages", pages)
            .count("provider_calls", 0)
            .notes_with(format!("would run `{}` against {source}", query.jql())));
    }
    let transport: Box<dyn SearchTransport + Sync> = match &t.fixtures_dir {
        Some(dir) => Box::new(
            FixtureTracker::open(dir).map_err(|e| CliError::MissingArtifact(e.to_string()))?,
        ),
        None => Box::new(
            HttpTracker::new(&t.base_url, Duration::from_secs(t.timeout_secs))
                .map_err(|e| CliError::Config(e.to_string()))?,
        ),
    };
    let parallelism = config.provider.max_in_flight.max(1);
    let reports = fetch_reports(transport.as_ref(), &query, parallelism)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let notes: Vec<String> = reports.iter().flat_map(RawBugReport::violations).collect();
    jsonl::write(&out_path(config, RAW_FILE), &reports)?;
    let mut out = Outcome::default().count("reports", reports.len());
    out.notes = notes;
    Ok(out)
}

impl Outcome {
    fn notes_with(mut self, note: String) -> Self {
        self.notes.push(note);
        self
    }
}

fn sample(config: &PipelineConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let population: Vec<RawBugReport> = read_artifact(&out_path(config, RAW_FILE), "fetch")?;
    let s = &config.sample;
    let total = s.total.unwrap_or(population.len());
    let (chosen, strata) = stratified_sample(&population, total, s.seed, s.method)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let pop_size = s.population_size.unwrap_or(population.len() as u64);
    if pop_size < total as u64 {
        return Err(CliError::Config(format!(
            "sample.population_size {pop_size} is below the sample size {total}"
        )));
    }
    let moe = margin_of_error(pop_size, total as u64, 0.5, Z_95);
    let names: Vec<&str> = s.resolutions.iter().map(String::as_str).collect();
    let kept = if names.is_empty() {
        chosen.clone()
    } else {
        filter_resolutions(&chosen, &names)
    };

    let mut text = vec![format!(
        "{:<24} {:>10} {:>7}",
        "Resolution", "Population", "Sample"
    )];
    for st in &strata {
        text.push(format!(
            "{:<24} {:>10} {:>7}",
            st.resolution_name, st.population_count, st.sample_count
        ));
    }
    text.push(format!("margin of error at 95%: ±{:.2}%", moe * 100.0));
    let out = Outcome {
        text,
        ..Outcome::default()
    }
    .count("population", population.len())
    .count("sampled", chosen.len())
    .count("kept", kept.len())
    .count("strata", strata.len());
    if dry_run {
        return Ok(out);
    }
    jsonl::write(
        &out_path(config, SAMPLE_MANIFEST_FILE),
        &manifest(&chosen, &strata, s.seed, s.method),
    )?;
    jsonl::write(&out_path(config, SAMPLE_FILE), &kept)?;
    Ok(out)
}

fn preprocess(config: &PipelineConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let reports: Vec<RawBugReport> = read_artifact(&out_path(config, SAMPLE_FILE), "sample")?;
    let rules = match &config.preprocess.rules_path {
        Some(p) => RuleSet::load(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => RuleSet::default(),
    };
    let with_text = reports
        .iter()
        .filter(|r| !r.description.trim().is_empty())
        .count();
    if dry_run {
        return Ok(Outcome::default()
            .count("reports", reports.len())
            .count("max_provider_calls", with_text));
    }
    let gateway = gateway(config)?;
    let pre = Preprocessor {
        rules,
        catalog: catalog(config)?,
    };
    let outputs: Vec<PreprocessOutput> = worker_pool(config)?.install(|| {
        reports
            .par_iter()
            .map(|r| timed(&r.key, || pre.run(r, &gateway)))
            .collect()
    });
    check_misses(&gateway)?;
    if let Some(failed) = outputs.iter().find_map(|o| o.error.as_ref()) {
        return Err(CliError::Provider(failed.clone()));
    }
    let warnings = outputs.iter().map(|o| o.warnings.len()).sum::<usize>();
    jsonl::write(&out_path(config, PREPROCESSED_FILE), &outputs)?;
    let absent = outputs.iter().filter(|o| o.report.has_absent()).count();
    Ok(Outcome::default()
        .count("reports", outputs.len())
        .count("with_absent_sections", absent)
        .count("warnings", warnings)
        .count("provider_calls", calls_made(&gateway)))
}

fn load_model(config: &PipelineConfig) -> Result<ClassifierModel, CliError> {
    let path = required(&config.detect.model_path, "detect.model_path")?;
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!(
            "{} not found; run `brqual train-detector` first",
            path.display()
        )));
    }
    let mut model = ClassifierModel::load(path).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(t) = config.detect.threshold {
        model.threshold = t;
    }
    Ok(model)
}

fn detect(config: &PipelineConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let inputs: Vec<PreprocessOutput> =
        read_artifact(&out_path(config, PREPROCESSED_FILE), "preprocess")?;
    let model = load_model(config)?;
    if dry_run {
        return Ok(Outcome::default()
            .count("reports", inputs.len())
            .count("max_provider_calls", inputs.len()));
    }
    let gateway = gateway(config)?;
    let detector = Detector::new(model, catalog(config)?);
    let detected: Vec<DetectedReport> = worker_pool(config)?.install(|| {
        inputs
            .par_iter()
            .map(|o| DetectedReport {
                detection: timed(&o.report.key, || detector.detect(&o.report, &gateway)),
                report: o.report.clone(),
            })
            .collect()
    });
    check_misses(&gateway)?;
    jsonl::write(&out_path(config, DETECTED_FILE), &detected)?;
    let failing = detected
        .iter()
        .filter(|d| d.detection.verdict == Verdict::Fail)
        .count();
    let invoked = detected.iter().filter(|d| d.detection.llm_invoked).count();
    Ok(Outcome::default()
        .count("reports", detected.len())
        .count("fail", failing)
        .count("pass", detected.len() - failing)
        .count("llm_invoked", invoked)
        .count("provider_calls", calls_made(&gateway)))
}

fn ablation_of(flags: AblationArgs) -> Ablation {
    Ablation {
        rag: !flags.no_rag,
        detector: !flags.no_detector,
        few_shot: !flags.no_fewshot,
    }
}

fn load_index(config: &PipelineConfig, needed: bool) -> Result<Option<VectorIndex>, CliError> {
    if !needed {
        return Ok(None);
    }
    let dir = required(&config.rag.index_dir, "rag.index_dir")?;
    if !dir.exists() {
        return Err(CliError::MissingArtifact(format!(
            "{} not found; run `brqual build-kb` first",
            dir.display()
        )));
    }
    VectorIndex::load(dir)
        .map(Some)
        .map_err(|e| CliError::Data(e.to_string()))
}

/// Upper bound on provider calls for one improve pass.
fn improve_call_estimate(detected: &[DetectedReport], ablation: Ablation) -> usize {
    detected
        .iter()
        .map(|d| {
            let sections = if ablation.detector {
                brqual::model::SectionKind::REQUIRED
                    .iter()
                    .filter(|&&k| d.detection.flags_for(k).next().is_some())
                    .count()
            } else {
                3
            };
            if sections == 0 {
                return 0;
            }
            // query generation, query embedding and rerank, then one call per
            // section plus a possible steps retry
            let rag = if ablation.rag { 3 } else { 0 };
            rag + sections + 1
        })
        .sum()
}

fn improve_all(
    config: &PipelineConfig,
    detected: &[DetectedReport],
    gateway: &Gateway,
    ablation: Ablation,
    catalog: &PromptCatalog,
    index: Option<&VectorIndex>,
) -> Result<Vec<ImprovedReport>, CliError> {
    let ctx = ImproveContext {
        catalog,
        index,
        rag: config.rag.funnel,
        token_budget: config.improve.token_budget,
    };
    let results: Vec<Result<ImprovedReport, ImproveError>> = worker_pool(config)?.install(|| {
        detected
            .par_iter()
            .map(|d| {
                timed(&d.report.key, || {
                    improve_report(&d.report, &d.detection, gateway, ablation, ctx)
                })
            })
            .collect()
    });
    let improved = results
        .into_iter()
        .map(|r| {
            r.map_err(|e| match e {
                ImproveError::Provider(p) => CliError::from(p),
                ImproveError::Config(m) => CliError::Config(m),
                ImproveError::CatalogMissing { .. } => CliError::Config(e.to_string()),
                other => CliError::Data(other.to_string()),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    check_misses(gateway)?;
    Ok(improved)
}

struct VariantSummary {
    reports: usize,
    rewritten: usize,
    failed: usize,
    knowledge_blocks: usize,
    completeness: CompletenessRates,
}

fn summarize(improved: &[ImprovedReport]) -> VariantSummary {
    let records = improved.iter().flat_map(|r| &r.records);
    let (mut rewritten, mut failed, mut knowledge_blocks) = (0, 0, 0);
    for r in records {
        if r.succeeded() {
            rewritten += 1;
        } else {
            failed += 1;
        }
        knowledge_blocks += r.retrieved_chunk_ids.len();
    }
    let results: Vec<CompletenessResult> = improved
        .iter()
        .map(|r| check_completeness(&r.base))
        .collect();
    VariantSummary {
        reports: improved.len(),
        rewritten,
        failed,
        knowledge_blocks,
        completeness: completeness_rates(&results),
    }
}

fn improve(
    config: &PipelineConfig,
    flags: AblationArgs,
    dry_run: bool,
) -> Result<Outcome, CliError> {
    let detected: Vec<DetectedReport> = read_artifact(&out_path(config, DETECTED_FILE), "detect")?;
    let ablation = ablation_of(flags);
    let catalog = catalog(config)?;
    let index = load_index(config, ablation.rag)?;
    if dry_run {
        return Ok(Outcome::default()
            .count("reports", detected.len())
            .count(
                "max_provider_calls",
                improve_call_estimate(&detected, ablation),
            )
            .notes_with(format!("variant: {ablation}")));
    }
    let gateway = gateway(config)?;
    let improved = improve_all(
        config,
        &detected,
        &gateway,
        ablation,
        &catalog,
        index.as_ref(),
    )?;
    jsonl::write(&out_path(config, IMPROVED_FILE), &improved)?;
    let s = summarize(&improved);
    let mut out = Outcome::default()
        .count("reports", s.reports)
        .count("sections_rewritten", s.rewritten)
        .count("sections_failed", s.failed)
        .count("provider_calls", calls_made(&gateway));
    out.notes = improved
        .iter()
        .flat_map(|r| r.warnings.iter().cloned())
        .collect();
    Ok(out)
}

pub fn variant_slug(a: Ablation) -> &'static str {
    match (a.rag, a.detector, a.few_shot) {
        (true, true, true) => "full",
        (false, true, true) => "no_rag",
        (true, false, true) => "no_detector",
        (true, true, false) => "no_fewshot",
        _ => "custom",
    }
}

fn ablate(config: &PipelineConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let detected: Vec<DetectedReport> = read_artifact(&out_path(config, DETECTED_FILE), "detect")?;
    let catalog = catalog(config)?;
    let index = load_index(config, true)?;
    if dry_run {
        let calls: usize = Ablation::STUDY
            .iter()
            .map(|&a| improve_call_estimate(&detected, a))
            .sum();
        return Ok(Outcome::default()
            .count("reports", detected.len())
            .count("variants", 4)
            .count("max_provider_calls", calls));
    }
    let gateway = gateway(config)?;
    let mut rows = vec![vec![
        "Variant".to_string(),
        "Reports".into(),
        "Rewritten".into(),
        "Failed".into(),
        "Knowledge".into(),
        "Complete".into(),
        "S2R executable".into(),
    ]];
    let mut json_rows = Vec::new();
    for ablation in Ablation::STUDY {
        let improved = improve_all(
            config,
            &detected,
            &gateway,
            ablation,
            &catalog,
            index.as_ref(),
        )?;
        let slug = variant_slug(ablation);
        jsonl::write(
            &out_path(config, &format!("{ABLATION_DIR}/{slug}.jsonl")),
            &improved,
        )?;
        let s = summarize(&improved);
        rows.push(vec![
            ablation.to_string(),
            s.reports.to_string(),
            s.rewritten.to_string(),
            s.failed.to_string(),
            s.knowledge_blocks.to_string(),
            format!("{:.1}%", 100.0 * s.completeness.complete),
            "(manual)".into(),
        ]);
        json_rows.push(serde_json::json!({
            "variant": slug,
            "ablation": ablation,
            "reports": s.reports,
            "sections_rewritten": s.rewritten,
            "sections_failed": s.failed,
            "knowledge_blocks": s.knowledge_blocks,
            "completeness": s.completeness,
            "s2r_executable": Value::Null,
        }));
    }
    let table = brqual::evaluate::align(&rows);
    write_text(&out_path(config, ABLATION_TABLE_FILE), &table)?;
    write_json(
        &out_path(config, &format!("{ABLATION_DIR}/summary.json")),
        &json_rows,
    )?;
    Ok(Outcome {
        text: table.lines().map(str::to_string).collect(),
        ..Outcome::default()
    }
    .count("reports", detected.len())
    .count("variants", Ablation::STUDY.len())
    .count("provider_calls", calls_made(&gateway)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessPair {
    pub key: String,
    pub raw: CompletenessResult,
    pub improved: CompletenessResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessStudy {
    pub raw: CompletenessRates,
    pub improved: CompletenessRates,
    /// Reports where a section present before is absent after improvement.
    pub regressions: Vec<String>,
    pub reports: Vec<CompletenessPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSubset {
    pub version: ReportVersion,
    pub results: Vec<KappaResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub completeness: CompletenessStudy,
    #[serde(default)]
    pub similarity: Option<SimilarityStudy>,
    #[serde(default)]
    pub agreement: Vec<AgreementSubset>,
}

fn completeness_study(raw: &[StructuredReport], improved: &[ImprovedReport]) -> CompletenessStudy {
    let by_key: HashMap<&str, &StructuredReport> = improved
        .iter()
        .map(|r| (r.base.key.as_str(), &r.base))
        .collect();
    let mut pairs = Vec::new();
    let mut regressions = Vec::new();
    for r in raw {
        let before = check_completeness(r);
        let after = check_completeness(by_key.get(r.key.as_str()).copied().unwrap_or(r));
        if (before.has_s2r && !after.has_s2r)
            || (before.has_ob && !after.has_ob)
            || (before.has_eb && !after.has_eb)
        {
            regressions.push(r.key.clone());
        }
        pairs.push(CompletenessPair {
            key: r.key.clone(),
            raw: before,
            improved: after,
        });
    }
    pairs.sort_by(|a, b| a.key.cmp(&b.key));
    let raw_results: Vec<_> = pairs.iter().map(|p| p.raw.clone()).collect();
    let improved_results: Vec<_> = pairs.iter().map(|p| p.improved.clone()).collect();
    CompletenessStudy {
        raw: completeness_rates(&raw_results),
        improved: completeness_rates(&improved_results),
        regressions,
        reports: pairs,
    }
}

fn read_reports(path: &Path, key: &str) -> Result<Vec<StructuredReport>, CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!(
            "{key} {} not found",
            path.display()
        )));
    }
    Ok(jsonl::read(path)?)
}

fn similarity_study(
    config: &PipelineConfig,
    raw: &[StructuredReport],
    improved: &[ImprovedReport],
) -> Result<Option<SimilarityStudy>, CliError> {
    let Some(truth_path) = &config.eval.ground_truth_path else {
        return Ok(None);
    };
    let comparison_path = required(&config.eval.comparison_path, "eval.comparison_path")?;
    let table_path = required(&config.eval.embeddings_path, "eval.embeddings_path")?;
    if !table_path.exists() {
        return Err(CliError::MissingArtifact(format!(
            "eval.embeddings_path {} not found",
            table_path.display()
        )));
    }
    let table = WordVectors::load(table_path).map_err(|e| CliError::Data(e.to_string()))?;
    let truth: HashMap<String, StructuredReport> =
        read_reports(truth_path, "eval.ground_truth_path")?
            .into_iter()
            .map(|r| (r.key.clone(), r))
            .collect();
    let comparison: HashMap<String, StructuredReport> =
        read_reports(comparison_path, "eval.comparison_path")?
            .into_iter()
            .map(|r| (r.key.clone(), r))
            .collect();
    let improved: HashMap<&str, &StructuredReport> = improved
        .iter()
        .map(|r| (r.base.key.as_str(), &r.base))
        .collect();
    let triples: Vec<StudyTriple> = raw
        .iter()
        .filter_map(|r| {
            Some(StudyTriple {
                key: r.key.clone(),
                raw: r.clone(),
                improved_a: comparison.get(&r.key)?.clone(),
                improved_b: (*improved.get(r.key.as_str())?).clone(),
                ground_truth: truth.get(&r.key)?.clone(),
            })
        })
        .collect();
    let corpus = study_corpus(&triples);
    run_similarity_study(&triples, &table, &corpus)
        .map(Some)
        .map_err(|e| CliError::Data(e.to_string()))
}

fn agreement(config: &PipelineConfig) -> Result<Vec<AgreementSubset>, CliError> {
    let Some(path) = &config.eval.annotations_path else {
        return Ok(Vec::new());
    };
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!(
            "eval.annotations_path {} not found",
            path.display()
        )));
    }
    let labels: Vec<ManualLabel> = jsonl::read(path)?;
    let mut out = Vec::new();
    for version in [ReportVersion::Raw, ReportVersion::Improved] {
        let subset: Vec<ManualLabel> = labels
            .iter()
            .filter(|l| l.version == version)
            .cloned()
            .collect();
        if subset.is_empty() {
            continue;
        }
        let results = kappa_study(&subset).map_err(|e| CliError::Data(e.to_string()))?;
        out.push(AgreementSubset { version, results });
    }
    Ok(out)
}

fn evaluate(config: &PipelineConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let raw: Vec<PreprocessOutput> =
        read_artifact(&out_path(config, PREPROCESSED_FILE), "preprocess")?;
    let improved: Vec<ImprovedReport> = read_artifact(&out_path(config, IMPROVED_FILE), "improve")?;
    let raw: Vec<StructuredReport> = raw.into_iter().map(|o| o.report).collect();
    let completeness = completeness_study(&raw, &improved);
    let similarity = similarity_study(config, &raw, &improved)?;
    let agreement = agreement(config)?;

    let mut tables = String::from("Completeness\n");
    tables.push_str(&completeness_table(&[
        ("Raw", completeness.raw),
        ("Improved", completeness.improved),
    ]));
    if let Some(study) = &similarity {
        tables.push_str("\nSimilarity to ground truth\n");
        tables.push_str(&similarity_table(study, ["Raw", "Comparison", "Improved"]));
    }
    for subset in &agreement {
        tables.push_str(&format!("\nAgreement ({:?})\n", subset.version));
        tables.push_str(&kappa_table(&subset.results));
    }
    let mut out = Outcome {
        text: tables.lines().map(str::to_string).collect(),
        ..Outcome::default()
    }
    .count("reports", raw.len())
    .count(
        "raw_complete_pct",
        round1(100.0 * completeness.raw.complete),
    )
    .count(
        "improved_complete_pct",
        round1(100.0 * completeness.improved.complete),
    )
    .count("regressions", completeness.regressions.len());
    if let Some(s) = &similarity {
        out = out
            .count("similarity_reports", s.raw.len())
            .count("significance_tests", s.tests.len());
    }
    if dry_run {
        return Ok(out);
    }
    let report = EvaluationReport {
        completeness,
        similarity,
        agreement,
    };
    write_json(&out_path(config, EVALUATION_FILE), &report)?;
    write_text(&out_path(config, EVALUATION_TABLES_FILE), &tables)?;
    Ok(out)
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn train_detector(config: &PipelineConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let labeled_path = required(&config.detect.labeled_path, "detect.labeled_path")?;
    let model_path = required(&config.detect.model_path, "detect.model_path")?;
    let examples: Vec<LabeledExample> = read_artifact(
        labeled_path,
        "fetch` and label reports, then `train-detector",
    )?;
    if dry_run {
        return Ok(Outcome::default().count("examples", examples.len()));
    }
    let mut train = TrainConfig {
        seed: config.sample.seed,
        ..TrainConfig::default()
    };
    if let Some(t) = config.detect.threshold {
        train.threshold = t;
    }
    let model = train_classifier(&examples, &train).map_err(|e| CliError::Data(e.to_string()))?;
    model
        .save(model_path)
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(Outcome::default()
        .count("examples", examples.len())
        .count("vocabulary", model.vocabulary.len())
        .count(
            "validation_accuracy_pct",
            model
                .metadata
                .validation_accuracy
                .map(|a| round1(100.0 * a)),
        ))
}

fn build_kb(config: &PipelineConfig, dry_run: bool) -> Result<Outcome, CliError> {
    let docs_path = required(&config.rag.knowledge_path, "rag.knowledge_path")?;
    let index_dir = required(&config.rag.index_dir, "rag.index_dir")?;
    let docs: Vec<KnowledgeDocument> =
        read_artifact(docs_path, "fetch` the knowledge pages, then `build-kb")?;
    let (size, overlap) = (config.rag.funnel.chunk_size, config.rag.funnel.overlap);
    if dry_run {
        let chunks: usize = docs
            .iter()
            .map(|d| chunk_text(&d.body, size, overlap).len())
            .sum();
        return Ok(Outcome::default()
            .count("documents", docs.len())
            .count("chunks", chunks)
            .count("max_provider_calls", chunks));
    }
    let gateway = gateway(config)?;
    let outcome = ingest_knowledge(
        &docs,
        &gateway,
        size,
        overlap,
        config.provider.max_in_flight.max(1),
    )
    .map_err(|e| match e {
        brqual::rag::IndexError::Provider(p) => CliError::from(p),
        other => CliError::Data(other.to_string()),
    })?;
    check_misses(&gateway)?;
    outcome
        .index
        .save(index_dir)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut out = Outcome::default()
        .count("documents", docs.len())
        .count("chunks", outcome.index.len())
        .count("provider_calls", calls_made(&gateway));
    out.notes = outcome.warnings;
    Ok(out)
}
