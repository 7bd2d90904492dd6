//! HTTP client for the generation service.
//!
//! `POST /generate`, `POST /dump` and `GET /healthz` with JSON bodies.
//! Transport failures are retried; HTTP error statuses are not.

use std::time::Duration;

use reqwest::blocking::{Client, Response};
use serde::{Deserialize, Serialize};

use super::{GenError, Generator, GeneratorRequest, GeneratorResponse, Mode};

#[derive(Debug, Deserialize)]
struct WireResponse {
    text: String,
    token_logprobs: Option<Vec<f64>>,
    model_tag: String,
}

#[derive(Debug, Deserialize)]
struct WireError {
    error: String,
}

#[derive(Debug, Deserialize)]
struct WireHealth {
    model_tag: String,
}

#[derive(Debug, Serialize)]
struct DumpRequest<'a> {
    concepts: &'a [String],
    mode: &'a str,
}

#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    base: String,
    client: Client,
    retries: usize,
}

impl RemoteGenerator {
    /// `endpoint` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(endpoint: &str, retries: usize, timeout: Duration) -> Result<Self, GenError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GenError::Transport {
                attempts: 0,
                msg: e.to_string(),
            })?;
        Ok(RemoteGenerator {
            base: endpoint.trim_end_matches('/').to_string(),
            client,
            retries,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn with_retries<F>(&self, mut send: F) -> Result<Response, GenError>
    where
        F: FnMut() -> reqwest::Result<Response>,
    {
        let mut last = String::new();
        for attempt in 1..=self.retries + 1 {
            match send() {
                Ok(resp) => return Ok(resp),
                Err(e) => {
                    log::debug!("attempt {attempt} failed: {e}");
                    last = e.to_string();
                }
            }
        }
        Err(GenError::Transport {
            attempts: self.retries + 1,
            msg: last,
        })
    }

    fn check_status(resp: Response) -> Result<Response, GenError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body = resp.text().unwrap_or_default();
        let msg = serde_json::from_str::<WireError>(&body)
            .map(|e| e.error)
            .unwrap_or(body);
        Err(GenError::Status {
            code: status.as_u16(),
            msg,
        })
    }

    /// Raw tensor-dump container bytes for one concept order.
    pub fn dump(&self, concepts: &[String], mode: Mode) -> Result<Vec<u8>, GenError> {
        let body = DumpRequest {
            concepts,
            mode: mode.as_str(),
        };
        let resp = self.with_retries(|| self.client.post(self.url("/dump")).json(&body).send())?;
        let bytes = Self::check_status(resp)?
            .bytes()
            .map_err(|e| GenError::Protocol(format!("reading dump body: {e}")))?;
        Ok(bytes.to_vec())
    }
}

/// Checks a decoded reply against the request's contract.
fn decode_reply(wire: WireResponse, want_logprobs: bool) -> Result<GeneratorResponse, GenError> {
    if wire.text.is_empty() {
        return Err(GenError::Protocol("empty text".into()));
    }
    let token_logprobs = match (wire.token_logprobs, want_logprobs) {
        (Some(lps), _) => lps,
        (None, true) => return Err(GenError::Protocol("token_logprobs missing".into())),
        (None, false) => Vec::new(),
    };
    if let Some(bad) = token_logprobs.iter().find(|lp| **lp > 0.0 || lp.is_nan()) {
        return Err(GenError::Protocol(format!(
            "log-probability {bad} is not in natural-log domain"
        )));
    }
    Ok(GeneratorResponse {
        text: wire.text,
        token_logprobs,
        model_tag: wire.model_tag,
    })
}

impl Generator for RemoteGenerator {
    fn generate(&self, request: &GeneratorRequest) -> Result<GeneratorResponse, GenError> {
        request.validate()?;
        let resp = self.with_retries(|| self.client.post(self.url("/generate")).json(request).send())?;
        let body = Self::check_status(resp)?
            .text()
            .map_err(|e| GenError::Protocol(format!("reading body: {e}")))?;
        let wire: WireResponse = serde_json::from_str(&body).map_err(|e| GenError::Protocol(e.to_string()))?;
        decode_reply(wire, request.want_logprobs)
    }

    fn model_tag(&self) -> Result<String, GenError> {
        let resp = self.with_retries(|| self.client.get(self.url("/healthz")).send())?;
        let body = Self::check_status(resp)?
            .text()
            .map_err(|e| GenError::Protocol(format!("reading body: {e}")))?;
        let health: WireHealth = serde_json::from_str(&body).map_err(|e| GenError::Protocol(e.to_string()))?;
        Ok(health.model_tag)
    }
}
