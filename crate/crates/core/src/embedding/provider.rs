//! Client for the embedding-provider HTTP protocol.
//!
//! `POST {base}/v1/embed` with `{modality, items: [{id, text} | {id, uri}]}`
//! answers `{dim, model, vectors: [{id, values}]}`; `GET {base}/v1/health`
//! answers `{status: "ok"}`.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, Modality, SetError};

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("transport error talking to {url}: {message}")]
    Transport { url: String, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Decode(String),
    #[error("provider dimension changed from {expected} to {got} within one session")]
    DimMismatch { expected: usize, got: usize },
    #[error("vector for {id:?} has {len} values, provider declared dim {dim}")]
    VectorLength { id: String, len: usize, dim: usize },
    #[error("response is missing ids: {}", .0.join(", "))]
    MissingIds(Vec<String>),
    #[error("response contains id {0:?} that was not requested")]
    UnexpectedId(String),
    #[error("response contains id {0:?} more than once")]
    DuplicateId(String),
    #[error("provider health check returned status {0:?}")]
    Unhealthy(String),
    #[error(transparent)]
    Set(#[from] SetError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedPayload {
    Text(String),
    Uri(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedItem {
    pub id: String,
    #[serde(flatten)]
    pub payload: EmbedPayload,
}

impl EmbedItem {
    pub fn text(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            payload: EmbedPayload::Text(text.into()),
        }
    }

    pub fn uri(id: impl Into<String>, uri: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            payload: EmbedPayload::Uri(uri.into()),
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    modality: Modality,
    items: &'a [EmbedItem],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    #[allow(dead_code)]
    model: String,
    vectors: Vec<VectorEntry>,
}

#[derive(Deserialize)]
struct VectorEntry {
    id: String,
    values: Vec<f32>,
}

#[derive(Deserialize)]
struct HealthResponse {
    status: String,
}

/// One provider session. The first response fixes the embedding dimension;
/// later responses must agree with it.
pub struct ProviderClient {
    base_url: String,
    http: reqwest::blocking::Client,
    batch_size: usize,
    session_dim: Mutex<Option<usize>>,
}

impl ProviderClient {
    pub fn new(base_url: impl Into<String>) -> Result<Self, ProviderError> {
        let base_url = base_url.into().trim_end_matches('/').to_string();
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| ProviderError::Transport {
                url: base_url.clone(),
                message: e.to_string(),
            })?;
        Ok(Self {
            base_url,
            http,
            batch_size: 256,
            session_dim: Mutex::new(None),
        })
    }

    /// Maximum items per request (at least 1).
    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn session_dim(&self) -> Option<usize> {
        *self.session_dim.lock().unwrap()
    }

    pub fn health(&self) -> Result<(), ProviderError> {
        let url = format!("{}/v1/health", self.base_url);
        let resp = self.http.get(&url).send().map_err(|e| transport(&url, e))?;
        let body: HealthResponse = decode(resp)?;
        if body.status == "ok" {
            Ok(())
        } else {
            Err(ProviderError::Unhealthy(body.status))
        }
    }

    /// Embed `items`, returning one record per item in request order.
    pub fn fetch(&self, modality: Modality, items: &[EmbedItem]) -> Result<EmbeddingSet, ProviderError> {
        let mut seen = HashSet::new();
        for item in items {
            if !seen.insert(item.id.as_str()) {
                return Err(ProviderError::Set(SetError::DuplicateId(item.id.clone())));
            }
        }
        let mut batches = Vec::new();
        for chunk in items.chunks(self.batch_size) {
            batches.push(self.fetch_batch(modality, chunk)?);
        }
        let dim = match self.session_dim() {
            Some(d) => d,
            // Empty request on a fresh session: nothing tells us the dim.
            None => return Err(ProviderError::Decode("no items requested and no session dimension".into())),
        };
        let mut set = EmbeddingSet::new(modality, dim)?;
        for (chunk, mut vectors) in items.chunks(self.batch_size).zip(batches) {
            for item in chunk {
                let v = vectors.remove(item.id.as_str()).expect("validated by fetch_batch");
                set.push(item.id.clone(), v)?;
            }
        }
        Ok(set)
    }

    fn fetch_batch<'a>(
        &self,
        modality: Modality,
        items: &'a [EmbedItem],
    ) -> Result<HashMap<&'a str, Vec<f32>>, ProviderError> {
        let url = format!("{}/v1/embed", self.base_url);
        let resp = self
            .http
            .post(&url)
            .json(&EmbedRequest { modality, items })
            .send()
            .map_err(|e| transport(&url, e))?;
        let body: EmbedResponse = decode(resp)?;

        {
            let mut dim = self.session_dim.lock().unwrap();
            match *dim {
                Some(expected) if expected != body.dim => {
                    return Err(ProviderError::DimMismatch {
                        expected,
                        got: body.dim,
                    })
                }
                Some(_) => {}
                None => {
                    if body.dim == 0 {
                        return Err(ProviderError::Set(SetError::ZeroDim));
                    }
                    *dim = Some(body.dim);
                }
            }
        }

        let requested: HashSet<&'a str> = items.iter().map(|i| i.id.as_str()).collect();
        let mut out: HashMap<&'a str, Vec<f32>> = HashMap::with_capacity(items.len());
        for entry in body.vectors {
            let Some(&key) = requested.get(entry.id.as_str()) else {
                return Err(ProviderError::UnexpectedId(entry.id));
            };
            if entry.values.len() != body.dim {
                return Err(ProviderError::VectorLength {
                    id: entry.id,
                    len: entry.values.len(),
                    dim: body.dim,
                });
            }
            if out.insert(key, entry.values).is_some() {
                return Err(ProviderError::DuplicateId(entry.id));
            }
        }
        let missing: Vec<String> = items
            .iter()
            .filter(|i| !out.contains_key(i.id.as_str()))
            .map(|i| i.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(ProviderError::MissingIds(missing));
        }
        Ok(out)
    }
}

fn transport(url: &str, e: reqwest::Error) -> ProviderError {
    ProviderError::Transport {
        url: url.to_string(),
        message: e.to_string(),
    }
}

fn decode<T: serde::de::DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T, ProviderError> {
    let status = resp.status();
    let text = resp.text().map_err(|e| ProviderError::Decode(e.to_string()))?;
    if !status.is_success() {
        return Err(ProviderError::Status {
            status: status.as_u16(),
            body: text,
        });
    }
    serde_json::from_str(&text).map_err(|e| ProviderError::Decode(e.to_string()))
}
