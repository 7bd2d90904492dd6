//! Corpus evaluation metrics and report emission.
//!
//! Kernels return values in [0, 1] (coverage and repetition are already
//! percentages); display scaling (BLEU/ROUGE x100, CIDEr x10) is applied
//! only when writing summary tables. All sentences are tokenized with
//! [`crate::textmatch::tokenize`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::Instance;
use crate::textmatch::{tokenize, LemmatizedSentence};

pub mod cider;
pub mod overlap;

pub use cider::CiderIdf;
pub use overlap::{bleu, corpus_bleu, discrepancy, lcs_len, rouge_2, rouge_l, Smoothing};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no instance with id {0:?}")]
    MissingInstance(String),
    #[error("instance {0:?} has no references")]
    NoReferences(String),
    #[error("need at least {need} instances, got {got}")]
    TooFewInstances { need: usize, got: usize },
    #[error("discrepancy needs at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("n-gram order {0} outside 1..=4")]
    InvalidOrder(usize),
    #[error("all judgement counts are zero")]
    ZeroCounts,
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("no outputs to evaluate")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Coverage,
    Repetition,
    Bleu3,
    Bleu4,
    Rouge2,
    RougeL,
    Cider,
    Discrepancy,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Coverage,
        Metric::Repetition,
        Metric::Bleu3,
        Metric::Bleu4,
        Metric::Rouge2,
        Metric::RougeL,
        Metric::Cider,
        Metric::Discrepancy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Coverage => "coverage",
            Metric::Repetition => "repetition",
            Metric::Bleu3 => "bleu3",
            Metric::Bleu4 => "bleu4",
            Metric::Rouge2 => "rouge2",
            Metric::RougeL => "rougel",
            Metric::Cider => "cider",
            Metric::Discrepancy => "discrepancy",
        }
    }

    /// Multiplier applied in summary tables.
    pub fn display_scale(self) -> f64 {
        match self {
            Metric::Bleu3 | Metric::Bleu4 | Metric::Rouge2 | Metric::RougeL => 100.0,
            Metric::Cider => 10.0,
            Metric::Coverage | Metric::Repetition | Metric::Discrepancy => 1.0,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_lowercase().replace(['-', '_'], "");
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .or(match key.as_str() {
                "diversity" => Some(Metric::Discrepancy),
                "rouge" => Some(Metric::RougeL),
                _ => None,
            })
            .ok_or_else(|| MetricError::UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub corpus_value: f64,
    pub config: BTreeMap<String, Value>,
    pub per_instance: BTreeMap<String, f64>,
}

impl MetricReport {
    fn new(metric: Metric, corpus_value: f64, per_instance: BTreeMap<String, f64>) -> Self {
        let mut config = BTreeMap::new();
        config.insert(
            "tokenizer".into(),
            json!("whitespace, edge punctuation stripped, lowercased"),
        );
        config.insert("display_scale".into(), json!(metric.display_scale()));
        MetricReport {
            metric: metric.name().into(),
            corpus_value,
            config,
            per_instance,
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.config.insert(key.into(), value);
        self
    }

    pub fn write_json<W: Write>(&self, w: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(w, self)
    }
}

fn mean(values: &BTreeMap<String, f64>) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.values().sum::<f64>() / values.len() as f64
    }
}

fn index(instances: &[Instance]) -> BTreeMap<&str, &Instance> {
    instances.iter().map(|i| (i.id.as_str(), i)).collect()
}

/// Pairs each output with its instance, failing on unknown ids.
fn join<'a>(
    outputs: &'a BTreeMap<String, String>,
    instances: &'a [Instance],
) -> Result<Vec<(&'a str, &'a str, &'a Instance)>, MetricError> {
    if outputs.is_empty() {
        return Err(MetricError::Empty);
    }
    let by_id = index(instances);
    outputs
        .iter()
        .map(|(id, text)| match by_id.get(id.as_str()) {
            Some(inst) => Ok((id.as_str(), text.as_str(), *inst)),
            None => Err(MetricError::MissingInstance(id.clone())),
        })
        .collect()
}

fn tokenized_refs(inst: &Instance) -> Result<Vec<Vec<String>>, MetricError> {
    if inst.references.is_empty() {
        return Err(MetricError::NoReferences(inst.id.clone()));
    }
    Ok(inst.references.iter().map(|r| tokenize(r)).collect())
}

/// Percentage of each instance's concepts present in its output.
pub fn coverage(outputs: &BTreeMap<String, String>, instances: &[Instance]) -> Result<MetricReport, MetricError> {
    let per: BTreeMap<String, f64> = join(outputs, instances)?
        .into_par_iter()
        .map(|(id, text, inst)| {
            let sent = LemmatizedSentence::new(text);
            let covered = inst
                .concept_set
                .iter()
                .filter(|c| !sent.positions(c).is_empty())
                .count();
            (id.to_string(), covered as f64 / inst.concept_set.len() as f64 * 100.0)
        })
        .collect();
    Ok(MetricReport::new(Metric::Coverage, mean(&per), per)
        .with("matching", json!("lemma equality on whole tokens"))
        .with("aggregation", json!("mean of per-instance percentages")))
}

/// Percentage of outputs in which some concept occurs more than once.
pub fn repetition_rate(
    outputs: &BTreeMap<String, String>,
    instances: &[Instance],
) -> Result<MetricReport, MetricError> {
    let per: BTreeMap<String, f64> = join(outputs, instances)?
        .into_par_iter()
        .map(|(id, text, inst)| {
            let sent = LemmatizedSentence::new(text);
            let repeated = inst.concept_set.iter().any(|c| sent.positions(c).len() >= 2);
            (id.to_string(), if repeated { 1.0 } else { 0.0 })
        })
        .collect();
    Ok(MetricReport::new(Metric::Repetition, mean(&per) * 100.0, per)
        .with("matching", json!("lemma equality on whole tokens"))
        .with("aggregation", json!("percentage of flagged instances")))
}

type Pair = (String, Vec<String>, Vec<Vec<String>>);

fn tokenized_pairs(outputs: &BTreeMap<String, String>, instances: &[Instance]) -> Result<Vec<Pair>, MetricError> {
    join(outputs, instances)?
        .into_iter()
        .map(|(id, text, inst)| Ok((id.to_string(), tokenize(text), tokenized_refs(inst)?)))
        .collect()
}

/// Corpus BLEU (pooled counts, unsmoothed) with per-instance sentence BLEU.
pub fn bleu_report(
    outputs: &BTreeMap<String, String>,
    instances: &[Instance],
    max_n: usize,
) -> Result<MetricReport, MetricError> {
    let metric = match max_n {
        3 => Metric::Bleu3,
        4 => Metric::Bleu4,
        n => return Err(MetricError::InvalidOrder(n)),
    };
    let pairs = tokenized_pairs(outputs, instances)?;
    let per: BTreeMap<String, f64> = pairs
        .par_iter()
        .map(|(id, c, refs)| Ok((id.clone(), bleu(c, refs, max_n, Smoothing::None)?)))
        .collect::<Result<_, MetricError>>()?;
    let pooled: Vec<(Vec<String>, Vec<Vec<String>>)> = pairs.into_iter().map(|(_, c, r)| (c, r)).collect();
    let corpus = corpus_bleu(&pooled, max_n, Smoothing::None)?;
    Ok(MetricReport::new(metric, corpus, per)
        .with("max_n", json!(max_n))
        .with("smoothing", json!("none"))
        .with("brevity_penalty", json!("closest reference length, shorter on ties"))
        .with("aggregation", json!("n-gram counts pooled over instances")))
}

fn mean_kernel(
    metric: Metric,
    outputs: &BTreeMap<String, String>,
    instances: &[Instance],
    kernel: fn(&[String], &[Vec<String>]) -> f64,
) -> Result<MetricReport, MetricError> {
    let per: BTreeMap<String, f64> = tokenized_pairs(outputs, instances)?
        .into_par_iter()
        .map(|(id, c, refs)| (id, kernel(&c, &refs)))
        .collect();
    Ok(MetricReport::new(metric, mean(&per), per).with("aggregation", json!("mean over instances")))
}

pub fn rouge2_report(outputs: &BTreeMap<String, String>, instances: &[Instance]) -> Result<MetricReport, MetricError> {
    Ok(
        mean_kernel(Metric::Rouge2, outputs, instances, rouge_2)?
            .with("score", json!("bigram F1, max over references")),
    )
}

pub fn rougel_report(outputs: &BTreeMap<String, String>, instances: &[Instance]) -> Result<MetricReport, MetricError> {
    Ok(mean_kernel(Metric::RougeL, outputs, instances, rouge_l)?
        .with("score", json!("LCS F1, max over references"))
        .with("beta", json!(1.0)))
}

/// CIDEr with IDF computed over the reference sets of `instances`.
pub fn cider(outputs: &BTreeMap<String, String>, instances: &[Instance]) -> Result<MetricReport, MetricError> {
    let sets = instances.iter().map(tokenized_refs).collect::<Result<Vec<_>, _>>()?;
    let idf = CiderIdf::from_reference_sets(&sets)?;
    let per: BTreeMap<String, f64> = tokenized_pairs(outputs, instances)?
        .into_par_iter()
        .map(|(id, c, refs)| (id, idf.score(&c, &refs)))
        .collect();
    Ok(MetricReport::new(Metric::Cider, mean(&per), per)
        .with("variant", json!("CIDEr (no length penalty, no clipping)"))
        .with("max_n", json!(cider::CIDER_MAX_N))
        .with("idf", json!("ln(N / max(1, df)) over instance reference sets"))
        .with("aggregation", json!("mean over instances")))
}

/// Per-instance discrepancy over top-k candidate lists; instances with fewer
/// than two candidates are an error.
pub fn diversity_report(candidates: &BTreeMap<String, Vec<String>>, max_n: usize) -> Result<MetricReport, MetricError> {
    if candidates.is_empty() {
        return Err(MetricError::Empty);
    }
    let per: BTreeMap<String, f64> = candidates
        .par_iter()
        .map(|(id, texts)| {
            let toks: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
            Ok((id.clone(), discrepancy(&toks, max_n)?))
        })
        .collect::<Result<_, MetricError>>()?;
    Ok(MetricReport::new(Metric::Discrepancy, mean(&per), per)
        .with("max_n", json!(max_n))
        .with("smoothing", json!("add-one for n >= 2"))
        .with("aggregation", json!("mean over instances")))
}

/// Runs a reference-based metric. [`Metric::Discrepancy`] needs candidate
/// lists and goes through [`diversity_report`].
pub fn evaluate(
    metric: Metric,
    outputs: &BTreeMap<String, String>,
    instances: &[Instance],
) -> Result<MetricReport, MetricError> {
    match metric {
        Metric::Coverage => coverage(outputs, instances),
        Metric::Repetition => repetition_rate(outputs, instances),
        Metric::Bleu3 => bleu_report(outputs, instances, 3),
        Metric::Bleu4 => bleu_report(outputs, instances, 4),
        Metric::Rouge2 => rouge2_report(outputs, instances),
        Metric::RougeL => rougel_report(outputs, instances),
        Metric::Cider => cider(outputs, instances),
        Metric::Discrepancy => Err(MetricError::UnknownMetric(
            "discrepancy requires top-k candidates".into(),
        )),
    }
}

/// Human-judgement pairwise score: (better - worse) / total, in [-1, 1].
pub fn pairwise_human_score(better: u64, worse: u64, same: u64) -> Result<f64, MetricError> {
    let total = better + worse + same;
    if total == 0 {
        return Err(MetricError::ZeroCounts);
    }
    Ok((better as f64 - worse as f64) / total as f64)
}

/// Writes one `metric,corpus_value,display_value,instances` row per report.
pub fn write_summary_csv<W: Write>(mut w: W, reports: &[MetricReport]) -> std::io::Result<()> {
    writeln!(w, "metric,corpus_value,display_value,instances")?;
    for r in reports {
        let scale = r.config.get("display_scale").and_then(Value::as_f64).unwrap_or(1.0);
        writeln!(
            w,
            "{},{},{:.2},{}",
            r.metric,
            r.corpus_value,
            r.corpus_value * scale,
            r.per_instance.len()
        )?;
    }
    Ok(())
}
