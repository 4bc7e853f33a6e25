//! Baseline-relative trait scores.
//!
//! A completion is scored as the sentence the model finished (stem followed
//! by the sanitized completion). Each trait is then shifted by the score of
//! the bare stem:
//!
//! ```text
//! normalized = score(sentence) - score(stem) + 0.5
//! ```
//!
//! so 0.5 means "no change from the prompt". Values are not clamped and may
//! leave `[0, 1]`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::battery::{PromptCategory, PromptSpec};
use crate::classifier::{ClassifierError, TraitScorer};
use crate::generation::GenerationRecord;
use crate::traits::{Trait, TraitScores};

/// Six unconstrained per-trait values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitVector {
    pub openness: f64,
    pub conscientiousness: f64,
    pub extraversion: f64,
    pub agreeableness: f64,
    pub neuroticism: f64,
    pub emotional_stability: f64,
}

impl TraitVector {
    pub fn get(&self, t: Trait) -> f64 {
        match t {
            Trait::Openness => self.openness,
            Trait::Conscientiousness => self.conscientiousness,
            Trait::Extraversion => self.extraversion,
            Trait::Agreeableness => self.agreeableness,
            Trait::Neuroticism => self.neuroticism,
            Trait::EmotionalStability => self.emotional_stability,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Trait) -> f64) -> Self {
        TraitVector {
            openness: f(Trait::Openness),
            conscientiousness: f(Trait::Conscientiousness),
            extraversion: f(Trait::Extraversion),
            agreeableness: f(Trait::Agreeableness),
            neuroticism: f(Trait::Neuroticism),
            emotional_stability: f(Trait::EmotionalStability),
        }
    }
}

/// `sentence - prompt + 0.5` per trait; emotional stability uses the
/// already-derived stability values of both sides.
pub fn baseline_adjust(sentence: &TraitScores, prompt: &TraitScores) -> TraitVector {
    TraitVector::from_fn(|t| sentence.get(t) - prompt.get(t) + 0.5)
}

/// Which text counts as the scored sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceMode {
    /// Stem, a space, then the sanitized completion.
    #[default]
    StemAndCompletion,
    CompletionOnly,
}

impl SentenceMode {
    pub fn sentence(self, stem: &str, completion: &str) -> String {
        match self {
            SentenceMode::StemAndCompletion => format!("{} {}", stem.trim(), completion.trim()),
            SentenceMode::CompletionOnly => completion.trim().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBaseline {
    pub prompt_id: String,
    pub classifier_id: String,
    pub scores: TraitScores,
}

#[derive(Debug, thiserror::Error)]
pub enum NormalizationError {
    #[error("battery prompt {prompt_id} cannot be scored: {source}")]
    UnscorablePrompt {
        prompt_id: String,
        #[source]
        source: ClassifierError,
    },
    #[error("baseline was computed with classifier {baseline} but scoring uses {scorer}")]
    ClassifierMismatch { baseline: String, scorer: String },
    #[error("record {prompt_id}#{completion_index} does not belong to prompt {baseline_prompt}")]
    PromptMismatch {
        prompt_id: String,
        completion_index: u32,
        baseline_prompt: String,
    },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// Stem scores keyed by (prompt id, classifier id). Many readers, one writer at a time.
#[derive(Default)]
pub struct BaselineCache {
    entries: RwLock<HashMap<(String, String), PromptBaseline>>,
    misses: AtomicUsize,
}

impl BaselineCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn baseline<S: TraitScorer + ?Sized>(
        &self,
        prompt: &PromptSpec,
        scorer: &S,
    ) -> Result<PromptBaseline, NormalizationError> {
        let key = (prompt.id.clone(), scorer.classifier_id().to_string());
        if let Some(b) = self.entries.read().expect("cache lock").get(&key) {
            return Ok(b.clone());
        }
        let mut entries = self.entries.write().expect("cache lock");
        if let Some(b) = entries.get(&key) {
            return Ok(b.clone());
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let scores = scorer
            .score(&prompt.text)
            .map_err(|source| NormalizationError::UnscorablePrompt {
                prompt_id: prompt.id.clone(),
                source,
            })?;
        let b = PromptBaseline {
            prompt_id: prompt.id.clone(),
            classifier_id: key.1.clone(),
            scores,
        };
        entries.insert(key, b.clone());
        Ok(b)
    }

    /// Number of times a baseline had to be computed.
    pub fn classifier_calls(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One line of `scores.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub prompt_id: String,
    pub category: PromptCategory,
    pub model_id: String,
    pub completion_index: u32,
    pub raw_scores: TraitScores,
    pub normalized: TraitVector,
    pub classifier_id: String,
}

impl ScoredRecord {
    pub fn key(&self) -> (&str, &str, u32) {
        (&self.model_id, &self.prompt_id, self.completion_index)
    }
}

/// The sentence text for `record`, or `None` when its sanitized completion is empty.
pub fn sentence_for(record: &GenerationRecord, prompt: &PromptSpec, mode: SentenceMode) -> Option<String> {
    if record.is_error() || record.sanitized_text.trim().is_empty() {
        None
    } else {
        Some(mode.sentence(&prompt.text, &record.sanitized_text))
    }
}

/// Builds the scored record from already-computed sentence scores.
pub fn scored_record(
    record: &GenerationRecord,
    prompt: &PromptSpec,
    baseline: &PromptBaseline,
    sentence_scores: TraitScores,
) -> ScoredRecord {
    ScoredRecord {
        prompt_id: record.prompt_id.clone(),
        category: prompt.category,
        model_id: record.model_id.clone(),
        completion_index: record.completion_index,
        normalized: baseline_adjust(&sentence_scores, &baseline.scores),
        raw_scores: sentence_scores,
        classifier_id: baseline.classifier_id.clone(),
    }
}

/// Scores one completion against its prompt baseline. `Ok(None)` marks a
/// skipped record (empty after sanitization or failed generation).
pub fn normalize<S: TraitScorer + ?Sized>(
    record: &GenerationRecord,
    prompt: &PromptSpec,
    baseline: &PromptBaseline,
    scorer: &S,
    mode: SentenceMode,
) -> Result<Option<ScoredRecord>, NormalizationError> {
    if baseline.classifier_id != scorer.classifier_id() {
        return Err(NormalizationError::ClassifierMismatch {
            baseline: baseline.classifier_id.clone(),
            scorer: scorer.classifier_id().to_string(),
        });
    }
    if record.prompt_id != baseline.prompt_id || record.prompt_id != prompt.id {
        return Err(NormalizationError::PromptMismatch {
            prompt_id: record.prompt_id.clone(),
            completion_index: record.completion_index,
            baseline_prompt: baseline.prompt_id.clone(),
        });
    }
    let Some(sentence) = sentence_for(record, prompt, mode) else {
        return Ok(None);
    };
    let scores = scorer.score(&sentence)?;
    Ok(Some(scored_record(record, prompt, baseline, scores)))
}

/// Percent with two decimals, e.g. `0.5191` renders as `51.91`.
pub fn percent(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}
