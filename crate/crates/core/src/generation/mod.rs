//! Completion backends and the bounded fan-out that drives them.

mod http;
mod mock;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::battery::PromptSpec;
use crate::sanitize::sanitize;

pub use http::{HttpBackend, HttpBackendSpec};
pub use mock::{MockBackend, MockProfile};

/// Decoding parameters sent with every completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 1.0,
            top_k: 40,
            top_p: 0.95,
            max_tokens: 128,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), GenerationError> {
        let bad = |field: &str, why: &str| Err(GenerationError::Config(format!("sampling.{field} {why}")));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", "must be positive");
        }
        if self.top_k == 0 {
            return bad("top_k", "must be positive");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p", "must be in (0, 1]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens", "must be positive");
        }
        Ok(())
    }
}

/// Which backend produces completions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    HttpCompletion(HttpBackendSpec),
    Mock {
        seed: u64,
        #[serde(default)]
        profile: MockProfile,
    },
}

impl BackendSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendSpec::HttpCompletion(_) => "http_completion",
            BackendSpec::Mock { .. } => "mock",
        }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        match self {
            BackendSpec::HttpCompletion(spec) => spec.validate(),
            BackendSpec::Mock { profile, .. } => profile.validate(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn CompletionBackend>, GenerationError> {
        self.validate()?;
        Ok(match self {
            BackendSpec::HttpCompletion(spec) => Box::new(HttpBackend::new(spec.clone())?),
            BackendSpec::Mock { seed, profile } => Box::new(MockBackend::new(*seed, profile.clone())),
        })
    }
}

/// Outcome of a single completion request.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompletionError {
    /// Recorded on the completion; the run continues.
    #[error("{0}")]
    Transport(String),
    /// Aborts the whole run.
    #[error("authentication failed: {0}")]
    Auth(String),
}

/// A source of sentence completions. Must be callable from many threads.
pub trait CompletionBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn kind(&self) -> &'static str;
    /// Returns the completion only, without the prompt stem.
    fn complete(
        &self,
        prompt: &PromptSpec,
        completion_index: u32,
        config: &SamplingConfig,
    ) -> Result<String, CompletionError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizeCounts {
    pub removed_non_ascii: usize,
    pub trimmed_repetition: bool,
    pub removed_long_tokens: usize,
}

/// One completion as persisted in `generations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_id: String,
    pub model_id: String,
    pub completion_index: u32,
    pub raw_text: String,
    pub sanitized_text: String,
    pub created_at: DateTime<Utc>,
    pub backend_kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sanitize: Option<SanitizeCounts>,
    /// Set when the completion failed after all retries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GenerationRecord {
    pub fn from_completion(
        prompt_id: &str,
        model_id: &str,
        backend_kind: &str,
        completion_index: u32,
        raw_text: String,
    ) -> Self {
        let report = sanitize(&raw_text);
        GenerationRecord {
            prompt_id: prompt_id.to_string(),
            model_id: model_id.to_string(),
            completion_index,
            sanitized_text: report.output_text,
            raw_text,
            created_at: Utc::now(),
            backend_kind: backend_kind.to_string(),
            sanitize: Some(SanitizeCounts {
                removed_non_ascii: report.removed_non_ascii,
                trimmed_repetition: report.trimmed_repetition,
                removed_long_tokens: report.removed_long_tokens,
            }),
            error: None,
        }
    }

    pub fn failed(
        prompt_id: &str,
        model_id: &str,
        backend_kind: &str,
        completion_index: u32,
        cause: String,
    ) -> Self {
        GenerationRecord {
            prompt_id: prompt_id.to_string(),
            model_id: model_id.to_string(),
            completion_index,
            raw_text: String::new(),
            sanitized_text: String::new(),
            created_at: Utc::now(),
            backend_kind: backend_kind.to_string(),
            sanitize: None,
            error: Some(cause),
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    /// Ordering key used everywhere records are listed.
    pub fn key(&self) -> (&str, u32) {
        (&self.prompt_id, self.completion_index)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("cancelled")]
    Cancelled,
    #[error("record sink failed: {0}")]
    Sink(String),
}

/// One unit of work: a prompt and a completion index.
#[derive(Debug, Clone)]
pub struct Job<'a> {
    pub prompt: &'a PromptSpec,
    pub completion_index: u32,
}

/// Runs `jobs` on `parallelism` worker threads and hands records to `sink`
/// in job order, whatever order they finish in.
///
/// Transport failures become error records. An auth failure stops new work
/// and is returned after in-flight jobs drain; so is cancellation via `cancel`.
/// Records delivered to `sink` before the error are kept by the caller.
pub fn fan_out<F>(
    backend: &dyn CompletionBackend,
    jobs: &[Job<'_>],
    config: &SamplingConfig,
    parallelism: usize,
    cancel: Option<&AtomicBool>,
    mut sink: F,
) -> Result<(), GenerationError>
where
    F: FnMut(GenerationRecord) -> Result<(), GenerationError>,
{
    config.validate()?;
    if parallelism == 0 {
        return Err(GenerationError::Config("parallelism must be positive".into()));
    }
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let stopped = || stop.load(Ordering::SeqCst) || cancel.is_some_and(|c| c.load(Ordering::SeqCst));

    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel::<(usize, Result<GenerationRecord, String>)>();
        for _ in 0..parallelism.min(jobs.len().max(1)) {
            let tx = tx.clone();
            let next = &next;
            let stopped = &stopped;
            let stop = &stop;
            s.spawn(move || loop {
                if stopped() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let p = job.prompt;
                let out = match backend.complete(p, job.completion_index, config) {
                    Ok(text) => Ok(GenerationRecord::from_completion(
                        &p.id,
                        backend.model_id(),
                        backend.kind(),
                        job.completion_index,
                        text,
                    )),
                    Err(CompletionError::Transport(cause)) => Ok(GenerationRecord::failed(
                        &p.id,
                        backend.model_id(),
                        backend.kind(),
                        job.completion_index,
                        cause,
                    )),
                    Err(CompletionError::Auth(msg)) => {
                        stop.store(true, Ordering::SeqCst);
                        Err(msg)
                    }
                };
                if tx.send((i, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, GenerationRecord> = BTreeMap::new();
        let mut emit_next = 0;
        let mut failure: Option<GenerationError> = None;
        for (i, out) in rx {
            match out {
                Ok(rec) => {
                    pending.insert(i, rec);
                }
                Err(msg) => {
                    stop.store(true, Ordering::SeqCst);
                    failure.get_or_insert(GenerationError::Auth(msg));
                }
            }
            // Emit the contiguous prefix; after a failure, keep only what precedes the gap.
            while let Some(rec) = pending.remove(&emit_next) {
                if failure.is_none() {
                    if let Err(e) = sink(rec) {
                        stop.store(true, Ordering::SeqCst);
                        failure = Some(e);
                    }
                }
                emit_next += 1;
            }
        }
        if let Some(e) = failure {
            return Err(e);
        }
        if emit_next < jobs.len() {
            return Err(GenerationError::Cancelled);
        }
        Ok(())
    })
}

/// `n` completions of one prompt, in completion-index order.
pub fn generate(
    backend: &dyn CompletionBackend,
    prompt: &PromptSpec,
    config: &SamplingConfig,
    n: u32,
    parallelism: usize,
) -> Result<Vec<GenerationRecord>, GenerationError> {
    if n == 0 {
        return Err(GenerationError::Config("n must be at least 1".into()));
    }
    let jobs: Vec<Job> = (0..n)
        .map(|completion_index| Job {
            prompt,
            completion_index,
        })
        .collect();
    let mut out = Vec::with_capacity(n as usize);
    fan_out(backend, &jobs, config, parallelism, None, |r| {
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}

/// Cuts `text` after `max_tokens` whitespace-delimited tokens.
pub(crate) fn truncate_tokens(text: &str, max_tokens: usize) -> &str {
    let mut count = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            if count == max_tokens {
                return text[..i].trim_end();
            }
            in_token = true;
            count += 1;
        }
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::Battery;

    #[test]
    fn defaults_match_published_sampling() {
        let c = SamplingConfig::default();
        assert_eq!((c.temperature, c.top_k, c.top_p, c.max_tokens), (1.0, 40, 0.95, 128));
        c.validate().unwrap();
    }

    #[test]
    fn invalid_sampling_is_rejected() {
        let c = SamplingConfig { top_p: 1.5, ..SamplingConfig::default() };
        assert!(c.validate().unwrap_err().to_string().contains("top_p"));
        let c = SamplingConfig { temperature: 0.0, ..SamplingConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn truncation_counts_whitespace_tokens() {
        assert_eq!(truncate_tokens("a b  c d", 2), "a b");
        assert_eq!(truncate_tokens("a b", 5), "a b");
        assert_eq!(truncate_tokens("  a b", 1), "  a");
    }

    struct Flaky;
    impl CompletionBackend for Flaky {
        fn model_id(&self) -> &str {
            "flaky"
        }
        fn kind(&self) -> &'static str {
            "test"
        }
        fn complete(&self, p: &PromptSpec, i: u32, _: &SamplingConfig) -> Result<String, CompletionError> {
            if i % 3 == 1 {
                Err(CompletionError::Transport("server error".into()))
            } else {
                std::thread::sleep(std::time::Duration::from_millis(u64::from(7 - i % 7)));
                Ok(format!("{} #{i}", p.id))
            }
        }
    }

    #[test]
    fn fan_out_keeps_order_and_count() {
        let battery = Battery::builtin();
        let recs = generate(&Flaky, &battery.prompts[0], &SamplingConfig::default(), 12, 5).unwrap();
        assert_eq!(recs.len(), 12);
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(r.completion_index, i as u32);
            assert_eq!(r.is_error(), i % 3 == 1);
        }
        assert_eq!(recs[1].error.as_deref(), Some("server error"));
    }

    struct Unauthorized;
    impl CompletionBackend for Unauthorized {
        fn model_id(&self) -> &str {
            "x"
        }
        fn kind(&self) -> &'static str {
            "test"
        }
        fn complete(&self, _: &PromptSpec, i: u32, _: &SamplingConfig) -> Result<String, CompletionError> {
            if i >= 3 {
                Err(CompletionError::Auth("HTTP 401".into()))
            } else {
                Ok("fine".into())
            }
        }
    }

    #[test]
    fn auth_failure_is_run_level() {
        let battery = Battery::builtin();
        let mut got = Vec::new();
        let jobs: Vec<Job> = (0..20).map(|i| Job { prompt: &battery.prompts[0], completion_index: i }).collect();
        let err = fan_out(&Unauthorized, &jobs, &SamplingConfig::default(), 1, None, |r| {
            got.push(r);
            Ok(())
        })
        .unwrap_err();
        assert!(matches!(err, GenerationError::Auth(_)));
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn zero_n_is_rejected() {
        let battery = Battery::builtin();
        assert!(generate(&Flaky, &battery.prompts[0], &SamplingConfig::default(), 0, 1).is_err());
    }
}
