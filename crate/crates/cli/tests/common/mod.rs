#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use brqual::gateway::{Gateway, ProviderConfig};
use brqual_cli::PipelineConfig;

pub const STAGES: [&str; 7] = [
    "fetch",
    "sample",
    "preprocess",
    "detect",
    "improve",
    "ablate",
    "evaluate",
];

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .canonicalize()
        .expect("fixtures directory")
}

pub fn config_path() -> PathBuf {
    fixtures().join("pipeline.toml")
}

/// Fixture configuration with no flag or environment overrides.
pub fn fixture_config() -> PipelineConfig {
    PipelineConfig::load(Some(&config_path()), &[], std::iter::empty()).expect("fixture config")
}

pub fn fixture_provider() -> ProviderConfig {
    fixture_config().provider
}

pub fn replay_gateway() -> Gateway {
    Gateway::from_config(fixture_provider()).expect("replay gateway")
}

/// Run the binary against the fixture config, writing into `out_dir`.
pub fn brqual(out_dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_brqual"));
    for (k, _) in std::env::vars() {
        if k.starts_with("BRQUAL_") {
            cmd.env_remove(k);
        }
    }
    cmd.arg("--config")
        .arg(config_path())
        .arg("--set")
        .arg(format!("paths.out_dir={}", out_dir.display()));
    cmd.args(args).output().expect("spawn brqual")
}

pub fn run_stage(out_dir: &Path, stage: &str) {
    let out = brqual(out_dir, &[stage]);
    assert!(
        out.status.success(),
        "brqual {stage} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn run_pipeline(out_dir: &Path) {
    for stage in STAGES {
        run_stage(out_dir, stage);
    }
}

/// Relative path and contents of every file under `root`, sorted.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push((
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                ));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
