//! Pipeline configuration: one TOML file, command-line overrides, then
//! `BRQUAL_<SECTION>_<KEY>` environment overrides on top.

use std::path::{Path, PathBuf};

use brqual::gateway::ProviderConfig;
use brqual::improve::DEFAULT_TOKEN_BUDGET;
use brqual::ingest::Apportionment;
use brqual::rag::RagConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const CONFIG_ENV: &str = "BRQUAL_CONFIG";
const ENV_PREFIX: &str = "BRQUAL_";
/// Variables under the prefix that are not config overrides.
const RESERVED_ENV: [&str; 2] = ["BRQUAL_API_KEY", "BRQUAL_CONFIG"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tracker: TrackerConfig,
    pub provider: ProviderConfig,
    pub sample: SampleConfig,
    pub preprocess: PreprocessConfig,
    pub detect: DetectConfig,
    pub rag: RagSettings,
    pub improve: ImproveConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub base_url: String,
    pub project: String,
    /// Read issues from JSON files here instead of the HTTP API.
    pub fixtures_dir: Option<PathBuf>,
    pub created_after: Option<String>,
    pub resolutions: Option<Vec<String>>,
    pub max_results: usize,
    pub page_size: usize,
    pub timeout_secs: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            base_url: "https://bugs.mojang.com".into(),
            project: "MC".into(),
            fixtures_dir: None,
            created_after: None,
            resolutions: None,
            max_results: 1000,
            page_size: 100,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub seed: u64,
    /// Sample size; `None` keeps the whole population.
    pub total: Option<usize>,
    pub method: Apportionment,
    /// Population size for the margin of error; defaults to the fetched count.
    pub population_size: Option<u64>,
    /// Resolutions kept after sampling; empty keeps everything.
    pub resolutions: Vec<String>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            seed: 42,
            total: None,
            method: Apportionment::default(),
            population_size: None,
            resolutions: brqual::ingest::sample::TARGET_RESOLUTIONS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub rules_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub model_path: Option<PathBuf>,
    /// Overrides the threshold stored in the model.
    pub threshold: Option<f64>,
    /// Labeled JSONL for `train-detector`.
    pub labeled_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RagSettings {
    pub index_dir: Option<PathBuf>,
    /// Knowledge documents (JSONL) for `build-kb`.
    pub knowledge_path: Option<PathBuf>,
    #[serde(flatten)]
    pub funnel: RagConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImproveConfig {
    pub catalog_path: Option<PathBuf>,
    pub token_budget: usize,
}

impl Default for ImproveConfig {
    fn default() -> Self {
        ImproveConfig {
            catalog_path: None,
            token_budget: DEFAULT_TOKEN_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub embeddings_path: Option<PathBuf>,
    /// Reference reports (JSONL of structured reports) for the similarity study.
    pub ground_truth_path: Option<PathBuf>,
    /// Reports from a comparison approach, scored as variant a.
    pub comparison_path: Option<PathBuf>,
    /// Manual labels (JSONL) for the agreement study.
    pub annotations_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Interpret an override value as a TOML scalar, falling back to a string.
fn parse_scalar(raw: &str) -> Value {
    let probe = format!("v = {raw}");
    match probe.parse::<Table>() {
        Ok(mut t) => match t.remove("v") {
            Some(
                v @ (Value::Integer(_) | Value::Float(_) | Value::Boolean(_) | Value::Array(_)),
            ) => v,
            Some(Value::String(s)) => Value::String(s),
            _ => Value::String(raw.to_string()),
        },
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Set `section.key` (the key may itself be dotted, as in `retry.attempts`).
pub fn set_path(root: &mut Table, dotted: &str, raw: &str) -> Result<(), ConfigError> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Invalid(format!(
            "override {dotted:?} must be section.key"
        )));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("{dotted}: {part} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw));
    Ok(())
}

/// `BRQUAL_PROVIDER_CACHE_PATH` becomes `provider.cache_path`: the first
/// underscore-separated word names the section.
fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && !RESERVED_ENV.contains(&k.as_str()))
        .filter_map(|(k, v)| {
            let rest = k[ENV_PREFIX.len()..].to_lowercase();
            let (section, key) = rest.split_once('_')?;
            Some((format!("{section}.{key}"), v))
        })
        .collect();
    out.sort();
    out
}

impl PipelineConfig {
    /// Load with precedence environment > flags > file. Relative paths are
    /// resolved against the config file's directory.
    pub fn load(
        path: Option<&Path>,
        flags: &[(String, String)],
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Read {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?;
                let table: Table =
                    text.parse()
                        .map_err(|e: toml::de::Error| ConfigError::Read {
                            path: p.display().to_string(),
                            message: e.to_string(),
                        })?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (Table::new(), PathBuf::new()),
        };
        for (k, v) in flags {
            set_path(&mut table, k, v)?;
        }
        for (k, v) in env_overrides(env) {
            set_path(&mut table, &k, &v)?;
        }
        let mut config: PipelineConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        config.resolve_paths(&base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                fix(p);
            }
        };
        fix_opt(&mut self.tracker.fixtures_dir);
        fix_opt(&mut self.provider.cache_path);
        fix_opt(&mut self.preprocess.rules_path);
        fix_opt(&mut self.detect.model_path);
        fix_opt(&mut self.detect.labeled_path);
        fix_opt(&mut self.rag.index_dir);
        fix_opt(&mut self.rag.knowledge_path);
        fix_opt(&mut self.improve.catalog_path);
        fix_opt(&mut self.eval.embeddings_path);
        fix_opt(&mut self.eval.ground_truth_path);
        fix_opt(&mut self.eval.comparison_path);
        fix_opt(&mut self.eval.annotations_path);
        fix(&mut self.paths.out_dir);
    }

    /// Checks that do not depend on which command runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.provider.embed_dim == 0 {
            return bad("provider.embed_dim must be positive".into());
        }
        if self.rag.funnel.keep == 0 || self.rag.funnel.pool_size < self.rag.funnel.keep {
            return bad("rag.keep must be in 1..=rag.pool_size".into());
        }
        if self.rag.funnel.overlap >= self.rag.funnel.chunk_size {
            return bad("rag.overlap must be smaller than rag.chunk_size".into());
        }
        if let Some(t) = self.detect.threshold {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("detect.threshold {t} is outside [0, 1]"));
            }
        }
        if self.improve.token_budget == 0 {
            return bad("improve.token_budget must be positive".into());
        }
        for (name, path) in [
            ("preprocess.rules_path", &self.preprocess.rules_path),
            ("improve.catalog_path", &self.improve.catalog_path),
            ("tracker.fixtures_dir", &self.tracker.fixtures_dir),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return bad(format!("{name} {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("brqual.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn env_beats_flag_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "[sample]\nseed = 1\ntotal = 10\n[provider]\nmax_in_flight = 2\n",
        );
        let flags = vec![
            ("sample.seed".to_string(), "2".to_string()),
            ("sample.total".to_string(), "20".to_string()),
        ];
        let env = vec![
            ("BRQUAL_SAMPLE_SEED".to_string(), "3".to_string()),
            ("BRQUAL_API_KEY".to_string(), "x".to_string()),
        ];
        let c = PipelineConfig::load(Some(&p), &flags, env).unwrap();
        assert_eq!(c.sample.seed, 3);
        assert_eq!(c.sample.total, Some(20));
        assert_eq!(c.provider.max_in_flight, 2);
        assert_eq!(c.paths.out_dir, dir.path().join("out"));
    }

    #[test]
    fn env_keys_map_to_sections() {
        let env = vec![
            (
                "BRQUAL_PROVIDER_CACHE_PATH".to_string(),
                "c.jsonl".to_string(),
            ),
            ("BRQUAL_PROVIDER_MODE".to_string(), "record".to_string()),
            ("OTHER".to_string(), "1".to_string()),
        ];
        let c = PipelineConfig::load(None, &[], env).unwrap();
        assert_eq!(c.provider.cache_path, Some(PathBuf::from("c.jsonl")));
        assert_eq!(c.provider.mode, brqual::gateway::ProviderMode::Record);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let flags = vec![("rag.keep".to_string(), "50".to_string())];
        assert!(matches!(
            PipelineConfig::load(None, &flags, vec![]),
            Err(ConfigError::Invalid(_))
        ));
        let flags = vec![("sample.nonsense".to_string(), "1".to_string())];
        assert!(matches!(
            PipelineConfig::load(None, &flags, vec![]),
            Err(ConfigError::Invalid(_))
        ));
        let flags = vec![(
            "preprocess.rules_path".to_string(),
            "/nope/rules.toml".to_string(),
        )];
        assert!(matches!(
            PipelineConfig::load(None, &flags, vec![]),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            PipelineConfig::load(Some(Path::new("/nope.toml")), &[], vec![]),
            Err(ConfigError::Read { .. })
        ));
    }

    #[test]
    fn scalars_are_typed() {
        assert_eq!(parse_scalar("12"), Value::Integer(12));
        assert_eq!(parse_scalar("true"), Value::Boolean(true));
        assert_eq!(parse_scalar("0.4"), Value::Float(0.4));
        assert_eq!(parse_scalar("out/dir"), Value::String("out/dir".into()));
        assert_eq!(parse_scalar("\"quoted\""), Value::String("quoted".into()));
    }
}
