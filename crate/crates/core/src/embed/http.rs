use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::http::{JsonClient, RetryPolicy};
use crate::io::short_hash;
use crate::num::Scalar;

use super::{EmbedError, Embedder, Embedding, Fingerprint};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    /// Full URL of the embeddings endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_max_batch() -> usize {
    64
}

/// Client for an OpenAI-style embeddings endpoint.
///
/// Request: `{"model": .., "input": [..]}`; response: `{"data": [{"embedding": [..]}, ..]}`.
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    client: JsonClient,
    dim: Mutex<Option<usize>>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Self {
        let client = JsonClient::new(&config.endpoint, config.auth_env.clone(), config.retry.clone());
        Self {
            config,
            client,
            dim: Mutex::new(None),
        }
    }

    pub fn retries(&self) -> u64 {
        self.client.retries()
    }

    /// Dimension learned from the first successful response.
    pub fn dim(&self) -> Option<usize> {
        *self.dim.lock().unwrap()
    }

    fn request<S: Scalar>(&self, texts: &[&str]) -> Result<Vec<Embedding<S>>, EmbedError> {
        let body = serde_json::json!({ "model": self.config.model, "input": texts });
        let resp = self.client.post(&body)?;
        let data = resp
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or_else(|| EmbedError::BadResponse("missing `data` array".into()))?;
        if data.len() != texts.len() {
            return Err(EmbedError::CountMismatch {
                expected: texts.len(),
                got: data.len(),
            });
        }
        let mut out = Vec::with_capacity(data.len());
        for item in data {
            let raw = item
                .get("embedding")
                .and_then(|e| e.as_array())
                .ok_or_else(|| EmbedError::BadResponse("missing `embedding`".into()))?;
            let values = raw
                .iter()
                .map(|v| {
                    v.as_f64()
                        .map(S::from_f64_lossy)
                        .ok_or_else(|| EmbedError::BadResponse("non-numeric component".into()))
                })
                .collect::<Result<Vec<S>, _>>()?;
            {
                let mut dim = self.dim.lock().unwrap();
                match *dim {
                    None => *dim = Some(values.len()),
                    Some(d) if d != values.len() => {
                        return Err(EmbedError::DimensionMismatch {
                            expected: d,
                            got: values.len(),
                        })
                    }
                    Some(_) => {}
                }
            }
            out.push(Embedding::normalized(values)?);
        }
        Ok(out)
    }
}

impl<S: Scalar> Embedder<S> for HttpEmbedder {
    fn fingerprint(&self) -> Fingerprint {
        Fingerprint {
            name: format!("http:{}", self.config.model),
            params_hash: short_hash(format!("{}|{}", self.config.endpoint, self.config.model).as_bytes()),
        }
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding<S>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.config.max_batch.max(1)) {
            out.extend(self.request::<S>(batch)?);
        }
        Ok(out)
    }
}
