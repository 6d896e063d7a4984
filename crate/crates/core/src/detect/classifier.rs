//! Logistic regression over TF-IDF features.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, SubsecRound, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tfidf::{SparseVec, TfIdf};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Fraction of each class held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityLabel {
    LowQuality,
    HighQuality,
}

impl QualityLabel {
    fn target(self) -> f64 {
        match self {
            QualityLabel::LowQuality => 1.0,
            QualityLabel::HighQuality => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub key: String,
    pub text: String,
    pub label: QualityLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            learning_rate: 2.0,
            l2: 1e-4,
            seed: 42,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub trained_at: DateTime<Utc>,
    pub training_corpus_hash: String,
    pub labeled_count: usize,
    #[serde(default)]
    pub validation_count: usize,
    /// Accuracy on the held-out split; absent when the split is empty.
    #[serde(default)]
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub format_version: u32,
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: BTreeMap<String, f64>,
    /// One weight per vocabulary index, then the bias.
    pub weights: Vec<f64>,
    pub threshold: f64,
    pub metadata: ModelMetadata,
    #[serde(skip)]
    features: Option<TfIdf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("need at least 2 labeled examples, got {0}")]
    InsufficientData(usize),
    #[error("all labeled examples carry the label {0:?}")]
    DegenerateLabels(QualityLabel),
    #[error("example {0} has empty text")]
    EmptyText(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model file {path}: {message}")]
    Io { path: String, message: String },
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn corpus_hash(examples: &[LabeledExample]) -> String {
    let mut h = Sha256::new();
    for e in examples {
        let line = serde_json::to_string(e).expect("example serializes");
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Seeded per-class split: `floor(count * 0.1)` of each class goes to validation.
fn split(examples: &[LabeledExample], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for label in [QualityLabel::LowQuality, QualityLabel::HighQuality] {
        let mut idx: Vec<usize> = (0..examples.len())
            .filter(|&i| examples[i].label == label)
            .collect();
        idx.shuffle(&mut rng);
        let n_valid = (idx.len() as f64 * VALIDATION_FRACTION).floor() as usize;
        valid.extend_from_slice(&idx[..n_valid]);
        train.extend_from_slice(&idx[n_valid..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    (train, valid)
}

impl ClassifierModel {
    fn build(features: TfIdf, weights: Vec<f64>, threshold: f64, metadata: ModelMetadata) -> Self {
        let idf = features
            .vocabulary()
            .iter()
            .map(|(t, &i)| (t.clone(), features.idf()[i]))
            .collect();
        ClassifierModel {
            format_version: MODEL_FORMAT_VERSION,
            vocabulary: features.vocabulary().clone(),
            idf,
            weights,
            threshold,
            metadata,
            features: Some(features),
        }
    }

    /// Hand-assembled model, mainly for tests and fixtures.
    pub fn from_weights(
        idf: BTreeMap<String, f64>,
        weights: Vec<f64>,
        threshold: f64,
    ) -> Result<Self, ClassifierError> {
        let vocabulary: BTreeMap<String, usize> = idf
            .keys()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let metadata = ModelMetadata {
            trained_at: DateTime::<Utc>::UNIX_EPOCH,
            training_corpus_hash: String::new(),
            labeled_count: 0,
            validation_count: 0,
            validation_accuracy: None,
        };
        let mut m = ClassifierModel {
            format_version: MODEL_FORMAT_VERSION,
            vocabulary,
            idf,
            weights,
            threshold,
            metadata,
            features: None,
        };
        m.prepare()?;
        Ok(m)
    }

    /// Check invariants and rebuild the feature extractor after deserialization.
    fn prepare(&mut self) -> Result<(), ClassifierError> {
        let bad = |m: String| Err(ClassifierError::InvalidModel(m));
        if self.format_version != MODEL_FORMAT_VERSION {
            return bad(format!(
                "unsupported format_version {}",
                self.format_version
            ));
        }
        if self.weights.len() != self.vocabulary.len() + 1 {
            return bad(format!(
                "{} weights for {} vocabulary entries",
                self.weights.len(),
                self.vocabulary.len()
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0,1)", self.threshold));
        }
        let mut idf = vec![0.0; self.vocabulary.len()];
        for (token, &i) in &self.vocabulary {
            if i >= idf.len() {
                return bad(format!("index {i} of {token:?} out of range"));
            }
            idf[i] = *self
                .idf
                .get(token)
                .ok_or_else(|| ClassifierError::InvalidModel(format!("no idf for {token:?}")))?;
        }
        self.features = Some(TfIdf::from_parts(self.vocabulary.clone(), idf));
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let mut m: ClassifierModel =
            serde_json::from_str(text).map_err(|e| ClassifierError::InvalidModel(e.to_string()))?;
        m.prepare()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = fs::read_to_string(path).map_err(|e| ClassifierError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let io = |e: std::io::Error| ClassifierError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path, text + "\n").map_err(io)
    }

    fn features(&self) -> &TfIdf {
        self.features
            .as_ref()
            .expect("model prepared on construction")
    }

    fn linear(&self, x: &SparseVec) -> f64 {
        let bias = *self.weights.last().unwrap_or(&0.0);
        bias + x.iter().map(|(i, v)| self.weights[*i] * v).sum::<f64>()
    }

    /// Probability that `text` is a low-quality report.
    pub fn score(&self, text: &str) -> f64 {
        sigmoid(self.linear(&self.features().transform(text)))
    }

    pub fn is_low_quality(&self, score: f64) -> bool {
        score >= self.threshold
    }
}

/// Full-batch gradient descent on the L2-regularized log loss.
///
/// Weights start at zero, so the result depends only on the data, the
/// hyperparameters and the seed that picks the validation split.
pub fn train_classifier(
    examples: &[LabeledExample],
    config: &TrainConfig,
) -> Result<ClassifierModel, ClassifierError> {
    if examples.len() < 2 {
        return Err(ClassifierError::InsufficientData(examples.len()));
    }
    if let Some(e) = examples.iter().find(|e| e.text.trim().is_empty()) {
        return Err(ClassifierError::EmptyText(e.key.clone()));
    }
    let first = examples[0].label;
    if examples.iter().all(|e| e.label == first) {
        return Err(ClassifierError::DegenerateLabels(first));
    }
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(ClassifierError::InvalidModel(format!(
            "threshold {} outside (0,1)",
            config.threshold
        )));
    }

    let (train, valid) = split(examples, config.seed);
    let train_texts: Vec<&str> = train.iter().map(|&i| examples[i].text.as_str()).collect();
    let features = TfIdf::fit(&train_texts);
    let xs: Vec<SparseVec> = train_texts.iter().map(|t| features.transform(t)).collect();
    let ys: Vec<f64> = train.iter().map(|&i| examples[i].label.target()).collect();

    let dim = features.len();
    let mut w = vec![0.0; dim + 1];
    let n = xs.len() as f64;
    for _ in 0..config.epochs {
        let mut grad = vec![0.0; dim + 1];
        for (x, y) in xs.iter().zip(&ys) {
            let z = w[dim] + x.iter().map(|(i, v)| w[*i] * v).sum::<f64>();
            let err = sigmoid(z) - y;
            for (i, v) in x {
                grad[*i] += err * v;
            }
            grad[dim] += err;
        }
        for i in 0..=dim {
            let reg = if i < dim { config.l2 * w[i] } else { 0.0 };
            w[i] -= config.learning_rate * (grad[i] / n + reg);
        }
    }

    let mut model = ClassifierModel::build(
        features,
        w,
        config.threshold,
        ModelMetadata {
            trained_at: Utc::now().trunc_subsecs(0),
            training_corpus_hash: corpus_hash(examples),
            labeled_count: examples.len(),
            validation_count: valid.len(),
            validation_accuracy: None,
        },
    );
    if !valid.is_empty() {
        let correct = valid
            .iter()
            .filter(|&&i| {
                let predicted_low = model.is_low_quality(model.score(&examples[i].text));
                predicted_low == (examples[i].label == QualityLabel::LowQuality)
            })
            .count();
        model.metadata.validation_accuracy = Some(correct as f64 / valid.len() as f64);
    }
    Ok(model)
}
