//! Conformance checks for a running generation service.
//!
//! [`check_service`] drives a live endpoint through the wire protocol and
//! reports one result per check. The same checks run against the stub server
//! in the integration tests and, when pointed at it, against the real
//! serving component.

use std::time::Duration;

use reqwest::blocking::Client;
use serde::Serialize;

use super::{GenError, Generator, GeneratorRequest, Mode, RemoteGenerator};
use crate::attnlab::dump::{load_dump, AttentionDump};

/// Concept order used for the shape checks.
pub const PROBE_CONCEPTS: [&str; 4] = ["pitcher", "throw", "ball", "batter"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub checks: Vec<CheckResult>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    fn record(&mut self, name: &'static str, outcome: Result<String, String>) {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(CheckResult { name, passed, detail });
    }
}

fn probe() -> Vec<String> {
    PROBE_CONCEPTS.iter().map(|s| s.to_string()).collect()
}

fn check_generate(gen: &RemoteGenerator, mode: Mode) -> Result<String, String> {
    let resp = gen
        .generate(&GeneratorRequest::new(probe(), mode))
        .map_err(|e| e.to_string())?;
    if resp.token_logprobs.is_empty() {
        return Err("no token_logprobs in reply".into());
    }
    Ok(format!("{} tokens scored", resp.token_logprobs.len()))
}

fn check_dump(gen: &RemoteGenerator) -> Result<String, String> {
    let concepts = probe();
    let bytes = gen.dump(&concepts, Mode::Planned).map_err(|e| e.to_string())?;
    let dump: AttentionDump = load_dump(&bytes).map_err(|e| e.to_string())?;
    if dump.plan != concepts {
        return Err(format!("dump plan {:?} differs from request", dump.plan));
    }
    if dump.enc_attn.len() != dump.layers * dump.heads * dump.seq() * dump.seq() {
        return Err("enc_attn shape mismatch".into());
    }
    Ok(format!(
        "L={} H={} S={} d={}",
        dump.layers,
        dump.heads,
        dump.seq(),
        dump.dim
    ))
}

/// Sends a raw body to `/generate` and expects a 4xx reply with a JSON
/// `{"error": ...}` body.
fn check_rejects(client: &Client, base: &str, body: &str) -> Result<String, String> {
    let resp = client
        .post(format!("{base}/generate"))
        .header("content-type", "application/json")
        .body(body.to_string())
        .send()
        .map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    let text = resp.text().unwrap_or_default();
    if !(400..500).contains(&status) {
        return Err(format!("expected 4xx, got {status}"));
    }
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|_| format!("error body is not JSON: {text:?}"))?;
    match v.get("error") {
        Some(serde_json::Value::String(_)) => Ok(format!("status {status}")),
        _ => Err(format!("error body lacks an \"error\" string: {text}")),
    }
}

/// Runs every protocol check against the service rooted at `base`.
pub fn check_service(base: &str, timeout: Duration) -> Result<ConformanceReport, GenError> {
    let base = base.trim_end_matches('/');
    let gen = RemoteGenerator::new(base, 0, timeout)?;
    let client = Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| GenError::Transport {
            attempts: 0,
            msg: e.to_string(),
        })?;

    let mut report = ConformanceReport::default();
    report.record(
        "healthz",
        gen.model_tag().map_err(|e| e.to_string()).and_then(|t| {
            if t.is_empty() {
                Err("empty model_tag".into())
            } else {
                Ok(t)
            }
        }),
    );
    report.record("generate_planned", check_generate(&gen, Mode::Planned));
    report.record("generate_draft", check_generate(&gen, Mode::Draft));
    report.record(
        "generate_without_logprobs",
        gen.generate(&GeneratorRequest {
            want_logprobs: false,
            ..GeneratorRequest::new(probe(), Mode::Planned)
        })
        .map(|r| format!("text {:?}", r.text))
        .map_err(|e| e.to_string()),
    );
    report.record("dump_row_stochastic", check_dump(&gen));
    report.record(
        "rejects_empty_concepts",
        check_rejects(
            &client,
            base,
            r#"{"concepts":[],"mode":"planned","want_logprobs":true}"#,
        ),
    );
    report.record("rejects_malformed_body", check_rejects(&client, base, "{\"concepts\":"));
    Ok(report)
}
