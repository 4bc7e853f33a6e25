use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ClassifierError, TraitScorer};
use crate::traits::{HeadScores, TraitScores};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<HeadScores>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub classifier_id: String,
}

/// Client for a scoring service. Emotional stability is derived here, never
/// taken from the service.
pub struct RemoteClassifier {
    base_url: String,
    client: reqwest::blocking::Client,
    batch_size: usize,
    classifier_id: String,
}

fn transport(e: reqwest::Error) -> ClassifierError {
    if e.is_timeout() {
        ClassifierError::Transport(format!("timeout: {e}"))
    } else {
        ClassifierError::Transport(e.to_string())
    }
}

impl RemoteClassifier {
    /// Checks `GET /health` and records the service's classifier id.
    pub fn connect(url: &str, timeout: Duration, batch_size: usize) -> Result<Self, ClassifierError> {
        if batch_size == 0 {
            return Err(ClassifierError::Protocol("batch size must be positive".into()));
        }
        let base_url = url.trim_end_matches('/').to_string();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .pool_max_idle_per_host(8)
            .build()
            .map_err(transport)?;
        let resp = client
            .get(format!("{base_url}/health"))
            .send()
            .map_err(transport)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ClassifierError::Transport(format!(
                "health check returned HTTP {}",
                status.as_u16()
            )));
        }
        let health: HealthResponse = resp
            .json()
            .map_err(|e| ClassifierError::Protocol(format!("bad /health body: {e}")))?;
        if health.status != "ok" {
            return Err(ClassifierError::Transport(format!(
                "service not ready: status {}",
                health.status
            )));
        }
        Ok(RemoteClassifier {
            base_url,
            client,
            batch_size,
            classifier_id: health.classifier_id,
        })
    }

    fn post_chunk(&self, texts: &[&str]) -> Result<Vec<TraitScores>, ClassifierError> {
        let body = ScoreRequest {
            texts: texts.iter().map(|t| t.to_string()).collect(),
        };
        let resp = self
            .client
            .post(format!("{}/score", self.base_url))
            .json(&body)
            .send()
            .map_err(transport)?;
        let status = resp.status();
        if status.as_u16() != 200 {
            let detail = resp.text().unwrap_or_default();
            return Err(ClassifierError::Transport(format!(
                "/score returned HTTP {}: {}",
                status.as_u16(),
                detail.trim()
            )));
        }
        let parsed: ScoreResponse = resp
            .json()
            .map_err(|e| ClassifierError::Protocol(format!("bad /score body: {e}")))?;
        if parsed.scores.len() != texts.len() {
            return Err(ClassifierError::Protocol(format!(
                "sent {} texts, received {} scores",
                texts.len(),
                parsed.scores.len()
            )));
        }
        parsed
            .scores
            .into_iter()
            .map(|h| {
                let s = TraitScores::from(h);
                if s.heads().iter().all(|p| (0.0..=1.0).contains(p)) {
                    Ok(s)
                } else {
                    Err(ClassifierError::Protocol(format!("score outside [0,1]: {h:?}")))
                }
            })
            .collect()
    }
}

impl TraitScorer for RemoteClassifier {
    fn classifier_id(&self) -> &str {
        &self.classifier_id
    }

    fn score(&self, text: &str) -> Result<TraitScores, ClassifierError> {
        self.score_batch(&[text]).pop().expect("one result per text")
    }

    fn score_batch(&self, texts: &[&str]) -> Vec<Result<TraitScores, ClassifierError>> {
        let mut out: Vec<Option<Result<TraitScores, ClassifierError>>> =
            texts.iter().map(|_| None).collect();
        let scorable: Vec<usize> = texts
            .iter()
            .enumerate()
            .filter_map(|(i, t)| {
                if t.trim().is_empty() {
                    out[i] = Some(Err(ClassifierError::Unscorable));
                    None
                } else {
                    Some(i)
                }
            })
            .collect();
        for chunk in scorable.chunks(self.batch_size) {
            let chunk_texts: Vec<&str> = chunk.iter().map(|&i| texts[i]).collect();
            match self.post_chunk(&chunk_texts) {
                Ok(scores) => {
                    for (&i, s) in chunk.iter().zip(scores) {
                        out[i] = Some(Ok(s));
                    }
                }
                Err(e) => {
                    let msg = e.to_string();
                    for &i in chunk {
                        out[i] = Some(Err(ClassifierError::Transport(msg.clone())));
                    }
                }
            }
        }
        out.into_iter().map(|r| r.expect("every slot filled")).collect()
    }
}
