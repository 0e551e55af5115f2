//! Blocking JSON-over-HTTP with bounded exponential-backoff retries.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body_excerpt}")]
    Status { status: u16, body_excerpt: String },
    #[error("environment variable {0} (auth token) is not set")]
    MissingAuth(String),
    #[error("response is not valid JSON: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
            timeout_secs: 120,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, retry: u32) -> Duration {
        let ms = self
            .initial_backoff_ms
            .saturating_mul(1u64 << retry.min(20))
            .min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}

const EXCERPT_LEN: usize = 200;

pub(crate) fn excerpt(body: &str) -> String {
    let mut s: String = body.chars().take(EXCERPT_LEN).collect();
    if body.chars().count() > EXCERPT_LEN {
        s.push('…');
    }
    s
}

pub struct JsonClient {
    client: reqwest::blocking::Client,
    endpoint: String,
    auth_env: Option<String>,
    policy: RetryPolicy,
    retries: AtomicU64,
}

impl JsonClient {
    pub fn new(endpoint: impl Into<String>, auth_env: Option<String>, policy: RetryPolicy) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(policy.timeout_secs.max(1)))
            .build()
            .expect("http client builds");
        Self {
            client,
            endpoint: endpoint.into(),
            auth_env,
            policy,
            retries: AtomicU64::new(0),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Total retries performed by this client so far.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    /// POSTs `body`; retries transport errors, 429 and 5xx.
    pub fn post(&self, body: &serde_json::Value) -> Result<serde_json::Value, HttpError> {
        let token = match &self.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| HttpError::MissingAuth(var.clone()))?),
            None => None,
        };
        let attempts = self.policy.max_attempts.max(1);
        let mut last_err = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                self.retries.fetch_add(1, Ordering::Relaxed);
                let wait = self.policy.backoff(attempt - 1);
                log::warn!(
                    "retrying POST {} (retry {attempt} of {}) after {:?}",
                    self.endpoint,
                    attempts - 1,
                    wait
                );
                std::thread::sleep(wait);
            }
            let mut req = self.client.post(&self.endpoint).json(body);
            if let Some(t) = &token {
                req = req.bearer_auth(t);
            }
            match req.send() {
                Err(e) => {
                    last_err = Some(HttpError::Transport {
                        attempts: attempt + 1,
                        message: e.to_string(),
                    });
                }
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        return serde_json::from_str(&text).map_err(|e| HttpError::Decode(e.to_string()));
                    }
                    let err = HttpError::Status {
                        status: status.as_u16(),
                        body_excerpt: excerpt(&text),
                    };
                    if status.as_u16() == 429 || status.is_server_error() {
                        last_err = Some(err);
                    } else {
                        return Err(err);
                    }
                }
            }
        }
        Err(match last_err {
            Some(HttpError::Transport { message, .. }) => HttpError::Transport { attempts, message },
            Some(e) => e,
            None => HttpError::Transport {
                attempts,
                message: "no attempt made".into(),
            },
        })
    }
}
