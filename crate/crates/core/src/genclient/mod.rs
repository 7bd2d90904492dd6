//! Generator boundary: request/response types, sequence scoring, an
//! in-flight cap, the deterministic mock and the HTTP client.

use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod conformance;
pub mod mock;
pub mod remote;

pub use mock::{MockGenerator, MockScript, ScoreRule, ScriptEntry, Template};
pub use remote::RemoteGenerator;

/// Largest batch a client accepts per call.
pub const MAX_BATCH: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("transport failure after {attempts} attempt(s): {msg}")]
    Transport { attempts: usize, msg: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("service returned status {code}: {msg}")]
    Status { code: u16, msg: String },
    #[error("log-probability {0} is positive")]
    Domain(f64),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Planner draft over an unordered concept linearization.
    Draft,
    /// Final generation that follows the given concept order.
    Planned,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Draft => "draft",
            Mode::Planned => "planned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeneratorRequest {
    #[serde(rename = "concepts")]
    pub concepts_in_order: Vec<String>,
    pub mode: Mode,
    pub want_logprobs: bool,
}

impl GeneratorRequest {
    pub fn new(concepts_in_order: Vec<String>, mode: Mode) -> Self {
        GeneratorRequest {
            concepts_in_order,
            mode,
            want_logprobs: true,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.concepts_in_order.is_empty() {
            return Err(GenError::InvalidRequest("empty concept list".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorResponse {
    pub text: String,
    /// Natural-log per-token probabilities; empty when not requested.
    pub token_logprobs: Vec<f64>,
    pub model_tag: String,
}

/// Sum of per-token log-probabilities, i.e. the log of the sequence
/// probability. Natural-log units; every entry must be <= 0.
pub fn score_sequence(token_logprobs: &[f64]) -> Result<f64, GenError> {
    let mut total = 0.0;
    for &lp in token_logprobs {
        if lp > 0.0 || lp.is_nan() {
            return Err(GenError::Domain(lp));
        }
        total += lp;
    }
    Ok(total)
}

/// Per-token mean log-probability; 0 for an empty sequence.
pub fn length_normalized_score(token_logprobs: &[f64]) -> Result<f64, GenError> {
    let total = score_sequence(token_logprobs)?;
    Ok(if token_logprobs.is_empty() {
        0.0
    } else {
        total / token_logprobs.len() as f64
    })
}

/// A text generator. Implementations must tolerate concurrent calls.
pub trait Generator: Send + Sync {
    fn generate(&self, request: &GeneratorRequest) -> Result<GeneratorResponse, GenError>;

    /// Identifies the model behind this generator for run provenance.
    fn model_tag(&self) -> Result<String, GenError>;

    /// Issues up to [`MAX_BATCH`] requests in one call.
    fn generate_batch(
        &self,
        requests: &[GeneratorRequest],
    ) -> Result<Vec<Result<GeneratorResponse, GenError>>, GenError> {
        if requests.len() > MAX_BATCH {
            return Err(GenError::InvalidRequest(format!(
                "batch of {} exceeds {MAX_BATCH}",
                requests.len()
            )));
        }
        Ok(requests.iter().map(|r| self.generate(r)).collect())
    }
}

impl<G: Generator + ?Sized> Generator for &G {
    fn generate(&self, request: &GeneratorRequest) -> Result<GeneratorResponse, GenError> {
        (**self).generate(request)
    }

    fn model_tag(&self) -> Result<String, GenError> {
        (**self).model_tag()
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn generate(&self, request: &GeneratorRequest) -> Result<GeneratorResponse, GenError> {
        (**self).generate(request)
    }

    fn model_tag(&self) -> Result<String, GenError> {
        (**self).model_tag()
    }
}

/// Bounds the number of requests in flight against the wrapped generator.
pub struct Throttled<G> {
    inner: G,
    cap: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<G: Generator> Throttled<G> {
    pub fn new(inner: G, cap: usize) -> Self {
        Throttled {
            inner,
            cap: cap.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }

    fn acquire(&self) {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
    }

    fn release(&self) {
        *self.in_flight.lock().unwrap() -= 1;
        self.freed.notify_one();
    }
}

impl<G: Generator> Generator for Throttled<G> {
    fn generate(&self, request: &GeneratorRequest) -> Result<GeneratorResponse, GenError> {
        self.acquire();
        let out = self.inner.generate(request);
        self.release();
        out
    }

    fn model_tag(&self) -> Result<String, GenError> {
        self.inner.model_tag()
    }
}
