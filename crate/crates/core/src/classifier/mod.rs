//! Trait scoring behind one interface.
//!
//! Two implementations exist: [`NativeModel`], a TF-IDF + logistic regression
//! model per trait loaded from a JSON artifact, and [`RemoteClassifier`], a
//! client for an HTTP scoring service (`POST /score`, `GET /health`).

mod native;
mod remote;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::traits::TraitScores;

pub use native::{tokenize, NativeModel, PerTrait, TokenizerSpec, TraitWeights};
pub use remote::{HealthResponse, RemoteClassifier, ScoreRequest, ScoreResponse};

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("text is empty after sanitization and cannot be scored")]
    Unscorable,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid model artifact: {0}")]
    Artifact(String),
    #[error("cannot read model artifact {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Anything that turns text into five trait probabilities.
pub trait TraitScorer: Send + Sync {
    /// Identifies the exact weights; stored with every score.
    fn classifier_id(&self) -> &str;

    fn score(&self, text: &str) -> Result<TraitScores, ClassifierError>;

    /// Scores each text independently; a failure affects only its own slot.
    fn score_batch(&self, texts: &[&str]) -> Vec<Result<TraitScores, ClassifierError>> {
        texts.iter().map(|t| self.score(t)).collect()
    }
}

/// Where scores come from, as written in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierHandle {
    Native {
        path: PathBuf,
    },
    Remote {
        url: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: f64,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
    },
}

fn default_timeout_secs() -> f64 {
    30.0
}

fn default_batch_size() -> usize {
    32
}

/// A loaded classifier.
pub enum Classifier {
    Native(NativeModel),
    Remote(RemoteClassifier),
}

impl ClassifierHandle {
    pub fn open(&self) -> Result<Classifier, ClassifierError> {
        match self {
            ClassifierHandle::Native { path } => NativeModel::load(path).map(Classifier::Native),
            ClassifierHandle::Remote {
                url,
                timeout_secs,
                batch_size,
            } => RemoteClassifier::connect(url, Duration::from_secs_f64(*timeout_secs), *batch_size)
                .map(Classifier::Remote),
        }
    }
}

impl TraitScorer for Classifier {
    fn classifier_id(&self) -> &str {
        match self {
            Classifier::Native(m) => m.classifier_id(),
            Classifier::Remote(r) => r.classifier_id(),
        }
    }

    fn score(&self, text: &str) -> Result<TraitScores, ClassifierError> {
        match self {
            Classifier::Native(m) => m.score(text),
            Classifier::Remote(r) => r.score(text),
        }
    }

    fn score_batch(&self, texts: &[&str]) -> Vec<Result<TraitScores, ClassifierError>> {
        match self {
            Classifier::Native(m) => m.score_batch(texts),
            Classifier::Remote(r) => r.score_batch(texts),
        }
    }
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
