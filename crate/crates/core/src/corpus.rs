//! Corpus data model: concept sets, plans, skeletons, instances and
//! generation records, plus JSON-lines ingestion and validation.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest concept set accepted anywhere in the toolkit (8! = 40,320 plans).
pub const MAX_CONCEPTS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),
    #[error("invalid concept set: {0}")]
    InvalidConcepts(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("instance {0:?} has no references")]
    MissingReferences(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e.to_string())
    }
}

/// An unordered set of lowercase concept lemmas, iterated lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConceptSet(BTreeSet<String>);

impl ConceptSet {
    pub fn new<I, S>(concepts: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for raw in concepts {
            let lemma = raw.as_ref().trim().to_lowercase();
            if lemma.is_empty() {
                return Err(CorpusError::InvalidConcepts("empty concept".into()));
            }
            if lemma.chars().any(char::is_whitespace) {
                return Err(CorpusError::InvalidConcepts(format!(
                    "concept {lemma:?} contains whitespace"
                )));
            }
            if !set.insert(lemma.clone()) {
                return Err(CorpusError::InvalidConcepts(format!("duplicate concept {lemma:?}")));
            }
        }
        if set.is_empty() {
            return Err(CorpusError::InvalidConcepts("empty concept set".into()));
        }
        if set.len() > MAX_CONCEPTS {
            return Err(CorpusError::InvalidConcepts(format!(
                "{} concepts exceeds the limit of {MAX_CONCEPTS}",
                set.len()
            )));
        }
        Ok(ConceptSet(set))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.0.contains(lemma)
    }

    /// Concepts in canonical (lexicographic) order.
    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    /// The canonical input order as a plan.
    pub fn canonical_plan(&self) -> Plan {
        Plan(self.0.iter().cloned().collect())
    }
}

impl Serialize for ConceptSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConceptSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        ConceptSet::new(raw).map_err(serde::de::Error::custom)
    }
}

/// An ordering of a concept set fixed before generation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Plan(Vec<String>);

impl Plan {
    /// Builds a plan, checking that `order` is a permutation of `concepts`.
    pub fn new<S: AsRef<str>>(order: &[S], concepts: &ConceptSet) -> Result<Self, CorpusError> {
        let order: Vec<String> = order.iter().map(|s| s.as_ref().to_lowercase()).collect();
        let mut seen = HashSet::new();
        for lemma in &order {
            if !concepts.contains(lemma) {
                return Err(CorpusError::InvalidPlan(format!("{lemma:?} is not in the concept set")));
            }
            if !seen.insert(lemma.as_str()) {
                return Err(CorpusError::InvalidPlan(format!("{lemma:?} repeated")));
            }
        }
        if order.len() != concepts.len() {
            return Err(CorpusError::InvalidPlan(format!(
                "plan has {} concepts, set has {}",
                order.len(),
                concepts.len()
            )));
        }
        Ok(Plan(order))
    }

    /// Wraps an order already known to be a permutation.
    pub(crate) fn from_trusted(order: Vec<String>) -> Self {
        Plan(order)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Recovers the concept set this plan permutes.
    pub fn concept_set(&self) -> Result<ConceptSet, CorpusError> {
        ConceptSet::new(&self.0)
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// The order in which concepts are realized in a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Skeleton {
    /// Covered concepts in first-occurrence order.
    pub ordered: Vec<String>,
    /// Concepts absent from the sentence, canonical order.
    pub uncovered: Vec<String>,
}

impl Skeleton {
    pub fn is_complete(&self) -> bool {
        self.uncovered.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    #[serde(rename = "concepts")]
    pub concept_set: ConceptSet,
    #[serde(rename = "refs", default)]
    pub references: Vec<String>,
}

/// Loosely typed corpus line, before validation.
#[derive(Debug, Clone, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub concepts: Vec<String>,
    #[serde(default)]
    pub refs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusMode {
    /// References are required.
    Training,
    /// References may be empty.
    Inference,
}

/// Validates parsed corpus lines. `raw` pairs each record with its 1-based line number.
pub fn validate_corpus(raw: Vec<(usize, RawRecord)>, mode: CorpusMode) -> Result<Vec<Instance>, CorpusError> {
    let mut ids = HashSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for (line, rec) in raw {
        if rec.id.is_empty() {
            return Err(CorpusError::Malformed {
                line,
                msg: "empty id".into(),
            });
        }
        let concept_set = ConceptSet::new(&rec.concepts).map_err(|e| CorpusError::Malformed {
            line,
            msg: e.to_string(),
        })?;
        if mode == CorpusMode::Training && rec.refs.is_empty() {
            return Err(CorpusError::MissingReferences(rec.id));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId(rec.id));
        }
        out.push(Instance {
            id: rec.id,
            concept_set,
            references: rec.refs,
        });
    }
    Ok(out)
}

/// Parses JSON-lines corpus text. Blank lines are skipped.
pub fn parse_corpus_lines<R: BufRead>(reader: R) -> Result<Vec<(usize, RawRecord)>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn read_corpus<R: BufRead>(reader: R, mode: CorpusMode) -> Result<Vec<Instance>, CorpusError> {
    validate_corpus(parse_corpus_lines(reader)?, mode)
}

pub fn write_corpus<W: Write>(mut w: W, instances: &[Instance]) -> Result<(), CorpusError> {
    for inst in instances {
        let line = serde_json::to_string(inst).map_err(|e| CorpusError::Io(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// One generation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub instance_id: String,
    pub plan: Plan,
    pub text: String,
    pub token_logprobs: Vec<f64>,
    pub score: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(text: &str) -> Result<Vec<Instance>, CorpusError> {
        read_corpus(text.as_bytes(), CorpusMode::Training)
    }

    #[test]
    fn accepts_dance_instance() {
        let got = corpus(r#"{"id":"1","concepts":["dance","music","crowd","watch"],"refs":["The crowd likes to watch her dance to the music."]}"#).unwrap();
        assert_eq!(got.len(), 1);
        let names: Vec<_> = got[0].concept_set.iter().collect();
        assert_eq!(names, ["crowd", "dance", "music", "watch"]);
    }

    #[test]
    fn rejects_empty_concepts() {
        let err = corpus(r#"{"id":"2","concepts":[],"refs":[]}"#).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn rejects_duplicate_ids() {
        let text = "{\"id\":\"7\",\"concepts\":[\"a\"],\"refs\":[\"a\"]}\n{\"id\":\"7\",\"concepts\":[\"b\"],\"refs\":[\"b\"]}";
        assert_eq!(corpus(text).unwrap_err(), CorpusError::DuplicateId("7".into()));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"1\",\"concepts\":[\"a\"],\"refs\":[\"a\"]}\n\nnot json";
        assert!(matches!(
            corpus(text).unwrap_err(),
            CorpusError::Malformed { line: 3, .. }
        ));
    }

    #[test]
    fn inference_mode_allows_missing_refs() {
        let text = r#"{"id":"1","concepts":["Dog","frisbee"]}"#;
        assert!(corpus(text).is_err());
        let got = read_corpus(text.as_bytes(), CorpusMode::Inference).unwrap();
        assert!(got[0].concept_set.contains("dog"));
    }

    #[test]
    fn concept_set_limits() {
        assert!(ConceptSet::new(["a b"]).is_err());
        assert!(ConceptSet::new(["a", "A"]).is_err());
        assert!(ConceptSet::new((0..9).map(|i| format!("c{i}"))).is_err());
        assert!(ConceptSet::new((0..8).map(|i| format!("c{i}"))).is_ok());
    }

    #[test]
    fn plan_rejects_repeats_and_foreign() {
        let set = ConceptSet::new(["a", "b", "c"]).unwrap();
        assert!(Plan::new(&["c", "a", "b"], &set).is_ok());
        assert!(Plan::new(&["a", "a", "b"], &set).is_err());
        assert!(Plan::new(&["a", "b", "z"], &set).is_err());
        assert!(Plan::new(&["a", "b"], &set).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn lemma() -> impl Strategy<Value = String> {
            "[a-z]{1,6}"
        }

        proptest! {
            #[test]
            fn corpus_round_trips(
                sets in prop::collection::vec(prop::collection::btree_set(lemma(), 1..=5), 1..6),
                refs in prop::collection::vec("[a-z ]{1,20}", 1..3),
            ) {
                let instances: Vec<Instance> = sets
                    .iter()
                    .enumerate()
                    .map(|(i, s)| Instance {
                        id: format!("i{i}"),
                        concept_set: ConceptSet::new(s).unwrap(),
                        references: refs.clone(),
                    })
                    .collect();
                let mut buf = Vec::new();
                write_corpus(&mut buf, &instances).unwrap();
                let back = read_corpus(buf.as_slice(), CorpusMode::Training).unwrap();
                prop_assert_eq!(back, instances);
            }

            #[test]
            fn any_permutation_is_a_plan(
                set in prop::collection::btree_set(lemma(), 1..=6),
                seed in any::<u64>(),
            ) {
                use rand::{seq::SliceRandom, SeedableRng};
                let concepts = ConceptSet::new(&set).unwrap();
                let mut order: Vec<String> = set.into_iter().collect();
                order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                prop_assert!(Plan::new(&order, &concepts).is_ok());
                let mut repeated = order.clone();
                repeated[0] = repeated[repeated.len() - 1].clone();
                if order.len() > 1 {
                    prop_assert!(Plan::new(&repeated, &concepts).is_err());
                }
            }
        }
    }
}
