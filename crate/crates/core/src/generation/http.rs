//! Completion-style HTTP backend.
//!
//! One request per completion: `{model, prompt, temperature, top_k, top_p,
//! max_tokens, n: 1}`, answered with `{"choices": [{"text": ...}]}`. With
//! `chat = true` the stem is wrapped in a single user message asking the
//! model to continue the sentence, and the reply is read from
//! `choices[0].message.content`.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{truncate_tokens, CompletionBackend, CompletionError, GenerationError, SamplingConfig};
use crate::battery::PromptSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendSpec {
    /// Absolute URL of the completion endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. The token itself is never stored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    /// Optional token-bucket refill rate; `None` means no rate cap beyond concurrency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests_per_second: Option<f64>,
    #[serde(default)]
    pub chat: bool,
}

fn default_timeout_secs() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    2
}
fn default_backoff_base_ms() -> u64 {
    500
}
fn default_max_concurrent() -> usize {
    4
}

impl HttpBackendSpec {
    pub fn new(endpoint: &str, model: &str) -> Self {
        HttpBackendSpec {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            auth_env: None,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
            max_concurrent: default_max_concurrent(),
            requests_per_second: None,
            chat: false,
        }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        let url = reqwest::Url::parse(&self.endpoint).map_err(|e| {
            GenerationError::Config(format!("backend.endpoint {:?} is not an absolute URL: {e}", self.endpoint))
        })?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(GenerationError::Config(format!(
                "backend.endpoint {:?} must use http or https",
                self.endpoint
            )));
        }
        if self.model.is_empty() {
            return Err(GenerationError::Config("backend.model must not be empty".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(GenerationError::Config("backend.timeout_secs must be positive".into()));
        }
        if self.max_concurrent == 0 {
            return Err(GenerationError::Config("backend.max_concurrent must be positive".into()));
        }
        if let Some(rps) = self.requests_per_second {
            if !(rps > 0.0 && rps.is_finite()) {
                return Err(GenerationError::Config(
                    "backend.requests_per_second must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Caps in-flight requests and, optionally, the request rate.
struct RateLimiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    max_in_flight: usize,
    bucket: Option<Mutex<Bucket>>,
}

struct Bucket {
    tokens: f64,
    capacity: f64,
    rate: f64,
    last: Instant,
}

struct Permit<'a>(&'a RateLimiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("limiter lock") -= 1;
        self.0.freed.notify_one();
    }
}

impl RateLimiter {
    fn new(max_in_flight: usize, rate: Option<f64>) -> Self {
        RateLimiter {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            max_in_flight,
            bucket: rate.map(|rate| {
                let capacity = rate.max(1.0);
                Mutex::new(Bucket {
                    tokens: capacity,
                    capacity,
                    rate,
                    last: Instant::now(),
                })
            }),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        if let Some(bucket) = &self.bucket {
            loop {
                let wait = {
                    let mut b = bucket.lock().expect("bucket lock");
                    let now = Instant::now();
                    b.tokens = (b.tokens + now.duration_since(b.last).as_secs_f64() * b.rate).min(b.capacity);
                    b.last = now;
                    if b.tokens >= 1.0 {
                        b.tokens -= 1.0;
                        None
                    } else {
                        Some(Duration::from_secs_f64((1.0 - b.tokens) / b.rate))
                    }
                };
                match wait {
                    None => break,
                    Some(d) => std::thread::sleep(d),
                }
            }
        }
        let mut n = self.in_flight.lock().expect("limiter lock");
        while *n >= self.max_in_flight {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        Permit(self)
    }
}

pub struct HttpBackend {
    spec: HttpBackendSpec,
    token: Option<String>,
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fail(CompletionError),
}

impl HttpBackend {
    pub fn new(spec: HttpBackendSpec) -> Result<Self, GenerationError> {
        spec.validate()?;
        let token = match &spec.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GenerationError::Config(format!("environment variable {var} (backend.auth_env) is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(spec.timeout_secs))
            .pool_max_idle_per_host(spec.max_concurrent)
            .build()
            .map_err(|e| GenerationError::Config(format!("cannot build HTTP client: {e}")))?;
        let limiter = RateLimiter::new(spec.max_concurrent, spec.requests_per_second);
        Ok(HttpBackend {
            spec,
            token,
            client,
            limiter,
        })
    }

    pub fn request_body(&self, prompt: &PromptSpec, config: &SamplingConfig) -> Value {
        let mut body = json!({
            "model": self.spec.model,
            "temperature": config.temperature,
            "top_k": config.top_k,
            "top_p": config.top_p,
            "max_tokens": config.max_tokens,
            "n": 1,
        });
        if self.spec.chat {
            body["messages"] = json!([{
                "role": "user",
                "content": format!(
                    "Continue the following sentence. Reply with the continuation only.\n\n{}",
                    prompt.text
                ),
            }]);
        } else {
            body["prompt"] = json!(prompt.text);
        }
        body
    }

    fn extract_text(&self, body: &Value) -> Option<String> {
        let choice = body.get("choices")?.get(0)?;
        let text = if self.spec.chat {
            choice.get("message")?.get("content")?.as_str()?
        } else {
            choice.get("text")?.as_str()?
        };
        Some(text.to_string())
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let _permit = self.limiter.acquire();
        let mut req = self.client.post(&self.spec.endpoint).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry("timeout".into()),
            Err(e) => return Attempt::Retry(format!("connection failed: {e}")),
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Fail(CompletionError::Auth(format!("HTTP {status}"))),
            429 => return Attempt::Retry("rate limited (HTTP 429)".into()),
            500..=599 => return Attempt::Retry(format!("server error (HTTP {status})")),
            _ => {
                let detail = resp.text().unwrap_or_default();
                return Attempt::Fail(CompletionError::Transport(format!(
                    "client error (HTTP {status}): {}",
                    detail.trim()
                )));
            }
        }
        let parsed: Value = match resp.json() {
            Ok(v) => v,
            Err(e) if e.is_timeout() => return Attempt::Retry("timeout".into()),
            Err(e) => return Attempt::Retry(format!("malformed response: {e}")),
        };
        match self.extract_text(&parsed) {
            Some(text) => Attempt::Done(text),
            None => Attempt::Fail(CompletionError::Transport(
                "malformed response: no completion text in choices[0]".into(),
            )),
        }
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.spec.backoff_base_ms as f64 * 2f64.powi(retry as i32);
        let jitter = rand::thread_rng().gen_range(0.5..=1.0);
        Duration::from_secs_f64(base * jitter / 1000.0)
    }
}

/// Drops a leading copy of the stem if the endpoint echoed it.
fn strip_stem<'a>(text: &'a str, stem: &str) -> &'a str {
    let trimmed = text.trim_start();
    trimmed.strip_prefix(stem).unwrap_or(text)
}

impl CompletionBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.spec.model
    }

    fn kind(&self) -> &'static str {
        "http_completion"
    }

    fn complete(
        &self,
        prompt: &PromptSpec,
        _completion_index: u32,
        config: &SamplingConfig,
    ) -> Result<String, CompletionError> {
        let body = self.request_body(prompt, config);
        let mut last_cause = String::new();
        for attempt in 0..=self.spec.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            match self.attempt(&body) {
                Attempt::Done(text) => {
                    let text = strip_stem(&text, &prompt.text);
                    return Ok(truncate_tokens(text, config.max_tokens as usize).to_string());
                }
                Attempt::Retry(cause) => last_cause = cause,
                Attempt::Fail(e) => return Err(e),
            }
        }
        Err(CompletionError::Transport(format!(
            "{last_cause} after {} attempts",
            self.spec.max_retries + 1
        )))
    }
}
