//! Permutation-invariance analysis: how often a generator produces the same
//! sentence (or the same skeleton) regardless of input concept order.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ConceptSet, Plan};
use crate::plankit::extract_skeleton;

pub const DEFAULT_ALPHA: f64 = 0.9;
pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InvarianceError {
    #[error("mode of an empty list is undefined")]
    Empty,
    #[error("alpha {0} outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("sweep for {instance:?} covers {got} of {expected} permutations")]
    IncompleteSweep {
        instance: String,
        expected: usize,
        got: usize,
    },
    #[error("sweep for {instance:?} has a plan that is not a permutation of its concepts: {plan}")]
    ForeignPlan { instance: String, plan: String },
    #[error("no scored instances")]
    NoInstances,
}

/// Most frequent item and its relative frequency; the smallest item wins ties.
pub fn mode_fraction<T: Ord + Clone>(items: &[T]) -> Result<(T, f64), InvarianceError> {
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for item in items {
        *counts.entry(item).or_insert(0) += 1;
    }
    let mut best: Option<(&T, usize)> = None;
    for (item, n) in counts {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((item, n));
        }
    }
    let (item, n) = best.ok_or(InvarianceError::Empty)?;
    Ok((item.clone(), n as f64 / items.len() as f64))
}

/// Lowercases and collapses whitespace before exact comparison.
pub fn normalize_sentence(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn factorial(m: usize) -> usize {
    (1..=m).product()
}

/// Outputs of one instance under every permutation of its concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SweepWire", into = "SweepWire")]
pub struct PermutationSweep {
    instance_id: String,
    concepts: ConceptSet,
    outputs: BTreeMap<Plan, String>,
}

impl PermutationSweep {
    /// Checks that `outputs` holds exactly the m! plans of `concepts`.
    pub fn new(
        instance_id: &str,
        concepts: ConceptSet,
        outputs: BTreeMap<Plan, String>,
    ) -> Result<Self, InvarianceError> {
        for plan in outputs.keys() {
            if Plan::new(plan.as_slice(), &concepts).as_ref() != Ok(plan) {
                return Err(InvarianceError::ForeignPlan {
                    instance: instance_id.into(),
                    plan: plan.to_string(),
                });
            }
        }
        let expected = factorial(concepts.len());
        if outputs.len() != expected {
            return Err(InvarianceError::IncompleteSweep {
                instance: instance_id.into(),
                expected,
                got: outputs.len(),
            });
        }
        Ok(PermutationSweep {
            instance_id: instance_id.into(),
            concepts,
            outputs,
        })
    }

    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    pub fn concepts(&self) -> &ConceptSet {
        &self.concepts
    }

    pub fn outputs(&self) -> &BTreeMap<Plan, String> {
        &self.outputs
    }

    pub fn m(&self) -> usize {
        self.concepts.len()
    }
}

#[derive(Serialize, Deserialize)]
struct SweepWire {
    instance_id: String,
    concepts: ConceptSet,
    outputs: Vec<SweepEntry>,
}

#[derive(Serialize, Deserialize)]
struct SweepEntry {
    plan: Plan,
    text: String,
}

impl TryFrom<SweepWire> for PermutationSweep {
    type Error = InvarianceError;

    fn try_from(w: SweepWire) -> Result<Self, Self::Error> {
        let n = w.outputs.len();
        let outputs: BTreeMap<Plan, String> = w.outputs.into_iter().map(|e| (e.plan, e.text)).collect();
        if outputs.len() != n {
            return Err(InvarianceError::IncompleteSweep {
                instance: w.instance_id,
                expected: factorial(w.concepts.len()),
                got: outputs.len(),
            });
        }
        PermutationSweep::new(&w.instance_id, w.concepts, outputs)
    }
}

impl From<PermutationSweep> for SweepWire {
    fn from(s: PermutationSweep) -> Self {
        SweepWire {
            instance_id: s.instance_id,
            concepts: s.concepts,
            outputs: s
                .outputs
                .into_iter()
                .map(|(plan, text)| SweepEntry { plan, text })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub instance_id: String,
    pub mode_sentence: String,
    pub mode_skeleton: Vec<String>,
    pub sentence_fraction: f64,
    pub skeleton_fraction: f64,
    pub sentence_invariant: bool,
    pub skeleton_invariant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SweepOutcome {
    Scored(SweepResult),
    /// Some permutation produced an empty output.
    Excluded {
        instance_id: String,
    },
}

fn check_alpha(alpha: f64) -> Result<(), InvarianceError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(InvarianceError::InvalidAlpha(alpha))
    }
}

/// Mode fractions of one sweep and whether each exceeds `alpha`.
pub fn sweep_invariance(sweep: &PermutationSweep, alpha: f64) -> Result<SweepOutcome, InvarianceError> {
    check_alpha(alpha)?;
    let sentences: Vec<String> = sweep.outputs.values().map(|s| normalize_sentence(s)).collect();
    if sentences.iter().any(String::is_empty) {
        return Ok(SweepOutcome::Excluded {
            instance_id: sweep.instance_id.clone(),
        });
    }
    let skeletons: Vec<Vec<String>> = sentences
        .iter()
        .map(|s| extract_skeleton(s, &sweep.concepts).ordered)
        .collect();
    let (mode_sentence, sentence_fraction) = mode_fraction(&sentences)?;
    let (mode_skeleton, skeleton_fraction) = mode_fraction(&skeletons)?;
    Ok(SweepOutcome::Scored(SweepResult {
        instance_id: sweep.instance_id.clone(),
        mode_sentence,
        mode_skeleton,
        sentence_fraction,
        skeleton_fraction,
        sentence_invariant: sentence_fraction > alpha,
        skeleton_invariant: skeleton_fraction > alpha,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_start: f64,
    pub bin_end: f64,
    pub count: usize,
    pub cumulative_pct: f64,
}

/// Fixed-width histogram of fractions over [0, 1]; 1.0 falls in the last bin.
pub fn histogram(fractions: &[f64], bins: usize) -> Result<Vec<HistogramBin>, InvarianceError> {
    if bins == 0 {
        return Err(InvarianceError::NoBins);
    }
    let mut counts = vec![0usize; bins];
    for &f in fractions {
        let i = ((f.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    let total = fractions.len();
    let mut running = 0;
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            running += count;
            HistogramBin {
                bin_start: i as f64 / bins as f64,
                bin_end: (i + 1) as f64 / bins as f64,
                count,
                cumulative_pct: if total == 0 {
                    0.0
                } else {
                    running as f64 / total as f64 * 100.0
                },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub alpha: f64,
    pub instances: usize,
    pub excluded: usize,
    pub sentence_invariant_pct: f64,
    pub skeleton_invariant_pct: f64,
    pub sentence_histogram: Vec<HistogramBin>,
    pub skeleton_histogram: Vec<HistogramBin>,
}

/// Corpus-level percentages and mode-fraction histograms.
pub fn invariance_report(
    outcomes: &[SweepOutcome],
    alpha: f64,
    bins: usize,
) -> Result<InvarianceReport, InvarianceError> {
    check_alpha(alpha)?;
    let scored: Vec<&SweepResult> = outcomes
        .iter()
        .filter_map(|o| match o {
            SweepOutcome::Scored(r) => Some(r),
            SweepOutcome::Excluded { .. } => None,
        })
        .collect();
    if scored.is_empty() {
        return Err(InvarianceError::NoInstances);
    }
    let n = scored.len() as f64;
    // flags are recomputed so a report can be drawn at any alpha
    let sentence = scored.iter().filter(|r| r.sentence_fraction > alpha).count();
    let skeleton = scored.iter().filter(|r| r.skeleton_fraction > alpha).count();
    let sf: Vec<f64> = scored.iter().map(|r| r.sentence_fraction).collect();
    let kf: Vec<f64> = scored.iter().map(|r| r.skeleton_fraction).collect();
    Ok(InvarianceReport {
        alpha,
        instances: scored.len(),
        excluded: outcomes.len() - scored.len(),
        sentence_invariant_pct: sentence as f64 / n * 100.0,
        skeleton_invariant_pct: skeleton as f64 / n * 100.0,
        sentence_histogram: histogram(&sf, bins)?,
        skeleton_histogram: histogram(&kf, bins)?,
    })
}

/// Scores every sweep in parallel and builds the report.
pub fn analyze_sweeps(
    sweeps: &[PermutationSweep],
    alpha: f64,
    bins: usize,
) -> Result<(Vec<SweepOutcome>, InvarianceReport), InvarianceError> {
    let outcomes = sweeps
        .par_iter()
        .map(|s| sweep_invariance(s, alpha))
        .collect::<Result<Vec<_>, _>>()?;
    let report = invariance_report(&outcomes, alpha, bins)?;
    Ok((outcomes, report))
}

/// Percentage of (plan, output) pairs whose output skeleton follows the plan
/// order over the concepts the output covers. Empty input gives 0.
pub fn skeleton_consistency<'a, I>(records: I) -> f64
where
    I: IntoIterator<Item = (&'a Plan, &'a str)>,
{
    let mut total = 0usize;
    let mut consistent = 0usize;
    for (plan, output) in records {
        total += 1;
        let Ok(concepts) = plan.concept_set() else { continue };
        let skeleton = extract_skeleton(output, &concepts);
        let restricted: Vec<&String> = plan
            .as_slice()
            .iter()
            .filter(|c| !skeleton.uncovered.contains(c))
            .collect();
        if restricted.iter().copied().eq(skeleton.ordered.iter()) {
            consistent += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        consistent as f64 / total as f64 * 100.0
    }
}

/// Writes `bin_start,bin_end,count,cumulative_pct` rows.
pub fn write_histogram_csv<W: Write>(mut w: W, bins: &[HistogramBin]) -> std::io::Result<()> {
    writeln!(w, "bin_start,bin_end,count,cumulative_pct")?;
    for b in bins {
        writeln!(w, "{},{},{},{}", b.bin_start, b.bin_end, b.count, b.cumulative_pct)?;
    }
    Ok(())
}
