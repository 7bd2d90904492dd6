//! Deterministic generator for offline runs and tests.
//!
//! Scripted entries map a concept order (optionally restricted to one mode)
//! to a fixed text and log-probabilities. Unscripted orders fall back to a
//! template that interleaves filler words with the concepts, scored by a
//! [`ScoreRule`].

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GenError, Generator, GeneratorRequest, GeneratorResponse, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// `None` matches both modes.
    #[serde(default)]
    pub mode: Option<Mode>,
    pub concepts: Vec<String>,
    pub text: String,
    pub token_logprobs: Vec<f64>,
}

/// Filler words cycled by position, placed before each concept.
/// An empty filler puts the concept directly after the previous one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub fillers: Vec<String>,
    pub terminal: String,
}

impl Default for Template {
    fn default() -> Self {
        Template {
            fillers: vec!["the".into(), String::new(), "the".into()],
            terminal: ".".into(),
        }
    }
}

impl Template {
    pub fn render(&self, concepts: &[String]) -> String {
        let mut words: Vec<&str> = Vec::with_capacity(concepts.len() * 2 + 1);
        for (i, c) in concepts.iter().enumerate() {
            if !self.fillers.is_empty() {
                let filler = &self.fillers[i % self.fillers.len()];
                if !filler.is_empty() {
                    words.push(filler);
                }
            }
            words.push(c);
        }
        if !self.terminal.is_empty() {
            words.push(&self.terminal);
        }
        words.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreRule {
    /// Every token gets the same log-probability.
    PerToken { logprob: f64 },
    /// Sequence score is minus the number of pairwise inversions of the
    /// request order relative to `reference` (sorted order when absent).
    NegInversions {
        #[serde(default)]
        reference: Option<Vec<String>>,
    },
}

impl Default for ScoreRule {
    fn default() -> Self {
        ScoreRule::PerToken { logprob: -1.0 }
    }
}

/// Counts pairs (i < j) whose reference ranks are out of order.
pub fn inversions(order: &[String], reference: &[String]) -> usize {
    let rank: HashMap<&str, usize> = reference.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let ranks: Vec<usize> = order
        .iter()
        .map(|c| rank.get(c.as_str()).copied().unwrap_or(usize::MAX))
        .collect();
    let mut n = 0;
    for i in 0..ranks.len() {
        for j in i + 1..ranks.len() {
            if ranks[i] > ranks[j] {
                n += 1;
            }
        }
    }
    n
}

impl ScoreRule {
    fn logprobs(&self, order: &[String], n_tokens: usize) -> Vec<f64> {
        match self {
            ScoreRule::PerToken { logprob } => vec![*logprob; n_tokens],
            ScoreRule::NegInversions { reference } => {
                let sorted;
                let reference = match reference {
                    Some(r) => r.as_slice(),
                    None => {
                        let mut s = order.to_vec();
                        s.sort();
                        sorted = s;
                        sorted.as_slice()
                    }
                };
                let inv = inversions(order, reference);
                let mut lps = vec![0.0; n_tokens.max(1)];
                if inv > 0 {
                    *lps.last_mut().unwrap() = -(inv as f64);
                }
                lps
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub entries: Vec<ScriptEntry>,
    #[serde(default)]
    pub template: Template,
    #[serde(default)]
    pub score_rule: ScoreRule,
    #[serde(default)]
    pub model_tag: Option<String>,
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn with_entry(mut self, mode: Option<Mode>, concepts: &[&str], text: &str, lps: &[f64]) -> Self {
        self.entries.push(ScriptEntry {
            mode,
            concepts: concepts.iter().map(|s| s.to_string()).collect(),
            text: text.into(),
            token_logprobs: lps.to_vec(),
        });
        self
    }
}

const DEFAULT_TAG: &str = "mock";

/// Pure, deterministic generator driven by a [`MockScript`].
#[derive(Debug, Clone)]
pub struct MockGenerator {
    exact: HashMap<(Mode, Vec<String>), usize>,
    any_mode: HashMap<Vec<String>, usize>,
    script: MockScript,
}

impl MockGenerator {
    pub fn new(script: MockScript) -> Self {
        let mut exact = HashMap::new();
        let mut any_mode = HashMap::new();
        // later entries override earlier ones
        for (i, e) in script.entries.iter().enumerate() {
            match e.mode {
                Some(m) => {
                    exact.insert((m, e.concepts.clone()), i);
                }
                None => {
                    any_mode.insert(e.concepts.clone(), i);
                }
            }
        }
        MockGenerator {
            exact,
            any_mode,
            script,
        }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    fn tag(&self) -> String {
        self.script.model_tag.clone().unwrap_or_else(|| DEFAULT_TAG.into())
    }
}

impl Default for MockGenerator {
    fn default() -> Self {
        Self::new(MockScript::default())
    }
}

impl Generator for MockGenerator {
    fn generate(&self, request: &GeneratorRequest) -> Result<GeneratorResponse, GenError> {
        request.validate()?;
        let key = &request.concepts_in_order;
        let hit = self
            .exact
            .get(&(request.mode, key.clone()))
            .or_else(|| self.any_mode.get(key))
            .map(|&i| &self.script.entries[i]);
        let (text, token_logprobs) = match hit {
            Some(entry) => (entry.text.clone(), entry.token_logprobs.clone()),
            None => {
                let text = self.script.template.render(key);
                let n = text.split_whitespace().count();
                let lps = self.script.score_rule.logprobs(key, n);
                (text, lps)
            }
        };
        Ok(GeneratorResponse {
            text,
            token_logprobs,
            model_tag: self.tag(),
        })
    }

    fn model_tag(&self) -> Result<String, GenError> {
        Ok(self.tag())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genclient::score_sequence;

    fn req(order: &[&str], mode: Mode) -> GeneratorRequest {
        GeneratorRequest::new(order.iter().map(|s| s.to_string()).collect(), mode)
    }

    #[test]
    fn default_template() {
        let g = MockGenerator::default();
        let out = g
            .generate(&req(&["pitcher", "throw", "ball", "batter"], Mode::Planned))
            .unwrap();
        assert_eq!(out.text, "the pitcher throw the ball the batter .");
        assert_eq!(out.token_logprobs.len(), 8);
        assert_eq!(out.model_tag, "mock");
    }

    #[test]
    fn script_overrides_template() {
        let script = MockScript::default()
            .with_entry(None, &["a", "b"], "scripted any", &[-0.1])
            .with_entry(Some(Mode::Draft), &["a", "b"], "scripted draft", &[-0.2]);
        let g = MockGenerator::new(script);
        assert_eq!(
            g.generate(&req(&["a", "b"], Mode::Draft)).unwrap().text,
            "scripted draft"
        );
        assert_eq!(
            g.generate(&req(&["a", "b"], Mode::Planned)).unwrap().text,
            "scripted any"
        );
        assert_eq!(g.generate(&req(&["b", "a"], Mode::Planned)).unwrap().text, "the b a .");
    }

    #[test]
    fn neg_inversion_rule_matches_brute_force() {
        let script = MockScript {
            score_rule: ScoreRule::NegInversions { reference: None },
            ..Default::default()
        };
        let g = MockGenerator::new(script);
        let concepts = ["a", "b", "c", "d"];
        for plan in crate::plankit::enumerate_plans(&crate::ConceptSet::new(concepts).unwrap()).unwrap() {
            let order: Vec<&str> = plan.as_slice().iter().map(String::as_str).collect();
            let mut brute = 0;
            for i in 0..order.len() {
                for j in 0..order.len() {
                    if i < j && order[i] > order[j] {
                        brute += 1;
                    }
                }
            }
            let out = g.generate(&req(&order, Mode::Planned)).unwrap();
            assert_eq!(score_sequence(&out.token_logprobs).unwrap(), -(brute as f64));
        }
    }

    #[test]
    fn empty_request_rejected() {
        assert!(MockGenerator::default().generate(&req(&[], Mode::Draft)).is_err());
    }

    #[test]
    fn script_json() {
        let script = MockScript::from_json(
            r#"{"entries":[{"mode":"draft","concepts":["x"],"text":"x .","token_logprobs":[-1.0]}],
                "score_rule":{"kind":"neg_inversions","reference":["b","a"]},
                "model_tag":"mock-v2"}"#,
        )
        .unwrap();
        assert_eq!(script.template, Template::default());
        let g = MockGenerator::new(script);
        assert_eq!(g.model_tag().unwrap(), "mock-v2");
        let out = g.generate(&req(&["a", "b"], Mode::Planned)).unwrap();
        assert_eq!(score_sequence(&out.token_logprobs).unwrap(), -1.0);
    }
}
