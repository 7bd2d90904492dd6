//! Analysis of dumped encoder/decoder tensors across input permutations.
//!
//! Every kernel aligns dumps by concept lemma: a concept's position in a
//! dump is the first token whose lemma matches it, and filler positions are
//! ignored in cross-permutation comparisons.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::textmatch::lemmatize;

pub mod deps;
pub mod dump;
pub mod stats;

pub use deps::{extract_gold_relations, parse_conllu, DepTree, GoldRelation};
pub use dump::{load_dump, AttentionDump, CrossAttention, DumpError};
pub use stats::spearman;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {need} inputs, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("dumps disagree: {0}")]
    Mismatch(String),
    #[error("concept {concept:?} absent from dump of {instance:?}")]
    ConceptAbsent { instance: String, concept: String },
    #[error("attention row restricted to concepts is all zero (layer {layer}, head {head}, concept {concept:?})")]
    DegenerateRow { layer: usize, head: usize, concept: String },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("no head sensitivities present")]
    NoSensitivities,
    #[error("dump of {0:?} has no cross-attention")]
    NoCrossAttention(String),
}

/// Concept positions per dump, concepts in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Alignment {
    pub concepts: Vec<String>,
    /// `positions[d][c]`: token index of concept `c` in dump `d`.
    pub positions: Vec<Vec<usize>>,
}

impl Alignment {
    pub fn position(&self, dump: usize, concept: &str) -> Option<usize> {
        let c = self.concepts.iter().position(|x| x == concept)?;
        Some(self.positions[dump][c])
    }
}

/// First-occurrence position of every plan concept in one dump.
pub fn concept_positions(dump: &AttentionDump) -> Result<Vec<(String, usize)>, AnalysisError> {
    let lemmas: Vec<String> = dump.tokens.iter().map(|t| lemmatize(t)).collect();
    let mut concepts = dump.plan.clone();
    concepts.sort();
    concepts
        .into_iter()
        .map(|c| {
            let target = lemmatize(&c);
            match lemmas.iter().position(|l| *l == target) {
                Some(p) => Ok((c, p)),
                None => Err(AnalysisError::ConceptAbsent {
                    instance: dump.instance_id.clone(),
                    concept: c,
                }),
            }
        })
        .collect()
}

fn sorted(items: &[String]) -> Vec<String> {
    let mut v = items.to_vec();
    v.sort();
    v
}

/// Aligns dumps of one instance's permutations by concept lemma.
pub fn align_permutations(dumps: &[AttentionDump]) -> Result<Alignment, AnalysisError> {
    let first = dumps.first().ok_or(AnalysisError::TooFew { need: 1, got: 0 })?;
    let concepts = sorted(&first.plan);
    let tokens = sorted(&first.tokens);
    let mut positions = Vec::with_capacity(dumps.len());
    for d in dumps {
        if d.instance_id != first.instance_id {
            return Err(AnalysisError::Mismatch(format!(
                "instance {:?} vs {:?}",
                d.instance_id, first.instance_id
            )));
        }
        if sorted(&d.plan) != concepts {
            return Err(AnalysisError::Mismatch("plans permute different concept sets".into()));
        }
        if sorted(&d.tokens) != tokens {
            return Err(AnalysisError::Mismatch("token multisets differ".into()));
        }
        positions.push(concept_positions(d)?.into_iter().map(|(_, p)| p).collect());
    }
    Ok(Alignment { concepts, positions })
}

fn check_shapes(dumps: &[AttentionDump]) -> Result<(usize, usize), AnalysisError> {
    let first = &dumps[0];
    for d in dumps {
        if d.layers != first.layers || d.heads != first.heads {
            return Err(AnalysisError::Mismatch("layer/head counts differ".into()));
        }
    }
    Ok((first.layers, first.heads))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerJsd {
    /// Mean over heads and query concepts, in bits.
    pub per_layer: Vec<f64>,
    /// `per_head[l][h]`, mean over query concepts.
    pub per_head: Vec<Vec<f64>>,
}

/// Concept-restricted, renormalized attention row of `concept_idx` in dump `d`.
fn restricted_row(
    dump: &AttentionDump,
    positions: &[usize],
    layer: usize,
    head: usize,
    query: usize,
) -> Option<Vec<f64>> {
    let row = dump.attn_row(layer, head, positions[query]);
    let raw: Vec<f64> = positions.iter().map(|&p| row[p] as f64).collect();
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return None;
    }
    Some(raw.into_iter().map(|x| x / sum).collect())
}

/// Jensen-Shannon divergence of encoder attention across permutations.
pub fn attention_jsd(dumps: &[AttentionDump], alignment: &Alignment) -> Result<LayerJsd, AnalysisError> {
    if dumps.len() < 2 {
        return Err(AnalysisError::TooFew {
            need: 2,
            got: dumps.len(),
        });
    }
    if alignment.positions.len() != dumps.len() {
        return Err(AnalysisError::Mismatch("alignment does not match dumps".into()));
    }
    let (layers, heads) = check_shapes(dumps)?;
    let m = alignment.concepts.len();
    let mut per_head = vec![vec![0.0; heads]; layers];
    for (l, row) in per_head.iter_mut().enumerate() {
        for (h, cell) in row.iter_mut().enumerate() {
            let mut total = 0.0;
            for q in 0..m {
                let dists = dumps
                    .iter()
                    .zip(&alignment.positions)
                    .map(|(d, pos)| restricted_row(d, pos, l, h, q))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| AnalysisError::DegenerateRow {
                        layer: l,
                        head: h,
                        concept: alignment.concepts[q].clone(),
                    })?;
                total += stats::jensen_shannon(&dists);
            }
            *cell = total / m as f64;
        }
    }
    let per_layer = per_head.iter().map(|r| r.iter().sum::<f64>() / heads as f64).collect();
    Ok(LayerJsd { per_layer, per_head })
}

/// Population variance of concept hidden states across permutations, per
/// layer (index 0 is the embedding output), averaged over dimensions and concepts.
pub fn hidden_variance(dumps: &[AttentionDump], alignment: &Alignment) -> Result<Vec<f64>, AnalysisError> {
    if dumps.len() < 2 {
        return Err(AnalysisError::TooFew {
            need: 2,
            got: dumps.len(),
        });
    }
    let (layers, _) = check_shapes(dumps)?;
    let dim = dumps[0].dim;
    if dumps.iter().any(|d| d.dim != dim) {
        return Err(AnalysisError::Mismatch("hidden dimensions differ".into()));
    }
    let m = alignment.concepts.len();
    let mut out = Vec::with_capacity(layers + 1);
    let mut column = vec![0.0; dumps.len()];
    for l in 0..=layers {
        let mut total = 0.0;
        for c in 0..m {
            for k in 0..dim {
                for (slot, (d, pos)) in column.iter_mut().zip(dumps.iter().zip(&alignment.positions)) {
                    *slot = d.hidden_at(l, pos[c])[k] as f64;
                }
                total += stats::population_variance(&column);
            }
        }
        out.push(if m * dim == 0 { 0.0 } else { total / (m * dim) as f64 });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelBest {
    pub label: String,
    pub layer: usize,
    pub head: usize,
    pub uas: f64,
    pub golds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UasReport {
    /// `per_head[l][h]`: hits / gold relations over all dumps.
    pub per_head: Vec<Vec<f64>>,
    /// Best head per relation label, labels sorted.
    pub best_by_label: Vec<LabelBest>,
}

fn argmax_head(grid: &[Vec<f64>]) -> (usize, usize, f64) {
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (l, row) in grid.iter().enumerate() {
        for (h, &v) in row.iter().enumerate() {
            if v > best.2 {
                best = (l, h, v);
            }
        }
    }
    best
}

/// Hit counts per head, overall and per relation label.
struct UasTally {
    layers: usize,
    heads: usize,
    hits: Vec<Vec<usize>>,
    total: usize,
    by_label: BTreeMap<String, (Vec<Vec<usize>>, usize)>,
}

impl UasTally {
    fn new(layers: usize, heads: usize) -> Self {
        UasTally {
            layers,
            heads,
            hits: vec![vec![0; heads]; layers],
            total: 0,
            by_label: BTreeMap::new(),
        }
    }

    fn add(
        &mut self,
        dumps: &[AttentionDump],
        gold: &[GoldRelation],
        alignment: &Alignment,
    ) -> Result<(), AnalysisError> {
        if alignment.positions.len() != dumps.len() {
            return Err(AnalysisError::Mismatch("alignment does not match dumps".into()));
        }
        if dumps.iter().any(|d| d.layers != self.layers || d.heads != self.heads) {
            return Err(AnalysisError::Mismatch("layer/head counts differ".into()));
        }
        let (layers, heads) = (self.layers, self.heads);
        for (di, d) in dumps.iter().enumerate() {
            for g in gold {
                let pos_of = |c: &str| {
                    alignment.position(di, c).ok_or_else(|| AnalysisError::ConceptAbsent {
                        instance: d.instance_id.clone(),
                        concept: c.to_string(),
                    })
                };
                let target = pos_of(&g.head)?;
                let source = pos_of(&g.dependent)?;
                let rivals: Vec<usize> = alignment.positions[di]
                    .iter()
                    .copied()
                    .filter(|&p| p != target && p != source)
                    .collect();
                let entry = self
                    .by_label
                    .entry(g.label.clone())
                    .or_insert_with(|| (vec![vec![0; heads]; layers], 0));
                entry.1 += 1;
                self.total += 1;
                for l in 0..layers {
                    for h in 0..heads {
                        let w = d.attn(l, h, source, target);
                        if rivals.iter().all(|&k| w > d.attn(l, h, k, target)) {
                            self.hits[l][h] += 1;
                            entry.0[l][h] += 1;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<UasReport, AnalysisError> {
        if self.total == 0 {
            return Err(AnalysisError::TooFew { need: 1, got: 0 });
        }
        let rate = |grid: &[Vec<usize>], n: usize| -> Vec<Vec<f64>> {
            grid.iter()
                .map(|r| r.iter().map(|&x| x as f64 / n as f64).collect())
                .collect()
        };
        let best_by_label = self
            .by_label
            .into_iter()
            .map(|(label, (grid, n))| {
                let (layer, head, uas) = argmax_head(&rate(&grid, n));
                LabelBest {
                    label,
                    layer,
                    head,
                    uas,
                    golds: n,
                }
            })
            .collect();
        Ok(UasReport {
            per_head: rate(&self.hits, self.total),
            best_by_label,
        })
    }
}

/// Attention probing: a head hits a gold relation when the dependent's
/// attention into the head concept is strictly greater than every other
/// concept's attention into the head concept.
pub fn probe_uas(
    dumps: &[AttentionDump],
    gold: &[GoldRelation],
    alignment: &Alignment,
) -> Result<UasReport, AnalysisError> {
    probe_uas_many(&[(dumps, gold, alignment)])
}

/// [`probe_uas`] pooled over several instances: hits and gold counts are
/// summed before dividing.
pub fn probe_uas_many(items: &[(&[AttentionDump], &[GoldRelation], &Alignment)]) -> Result<UasReport, AnalysisError> {
    let first = items
        .iter()
        .find_map(|(d, _, _)| d.first())
        .ok_or(AnalysisError::TooFew { need: 1, got: 0 })?;
    let mut tally = UasTally::new(first.layers, first.heads);
    for (dumps, gold, alignment) in items {
        tally.add(dumps, gold, alignment)?;
    }
    tally.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadImportance {
    pub layer: usize,
    pub head: usize,
    pub mean_abs_sensitivity: f64,
    /// 1 = most important.
    pub rank: usize,
}

/// Ranks heads by mean absolute sensitivity over the dumps that carry one.
pub fn head_importance_rank(dumps: &[AttentionDump]) -> Result<Vec<HeadImportance>, AnalysisError> {
    let with: Vec<&AttentionDump> = dumps.iter().filter(|d| d.head_sens.is_some()).collect();
    let Some(first) = with.first() else {
        return Err(AnalysisError::NoSensitivities);
    };
    let (layers, heads) = (first.layers, first.heads);
    if with.iter().any(|d| d.layers != layers || d.heads != heads) {
        return Err(AnalysisError::Mismatch("layer/head counts differ".into()));
    }
    let mut rows = Vec::with_capacity(layers * heads);
    for l in 0..layers {
        for h in 0..heads {
            let sum: f64 = with.iter().map(|d| (d.sensitivity(l, h).unwrap() as f64).abs()).sum();
            rows.push((l, h, sum / with.len() as f64));
        }
    }
    // stable sort keeps (layer, head) order among ties
    rows.sort_by(|a, b| b.2.total_cmp(&a.2));
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (layer, head, mean))| HeadImportance {
            layer,
            head,
            mean_abs_sensitivity: mean,
            rank: i + 1,
        })
        .collect())
}

/// Fraction of consecutive decoding steps whose most-attended input concept
/// does not move left, using final-layer cross-attention averaged over heads.
pub fn monotonicity_report(dump: &AttentionDump) -> Result<f64, AnalysisError> {
    let cross = dump
        .cross_attn
        .as_ref()
        .ok_or_else(|| AnalysisError::NoCrossAttention(dump.instance_id.clone()))?;
    let steps = cross.out_tokens.len();
    if steps <= 1 {
        return Ok(1.0);
    }
    let mut concept_pos: Vec<usize> = concept_positions(dump)?.into_iter().map(|(_, p)| p).collect();
    concept_pos.sort_unstable();
    let last = dump.layers - 1;
    let attended: Vec<usize> = (0..steps)
        .map(|t| {
            let mut best = (concept_pos[0], f64::NEG_INFINITY);
            for &p in &concept_pos {
                let w: f64 = (0..dump.heads)
                    .map(|h| dump.cross_row(last, h, t).unwrap()[p] as f64)
                    .sum::<f64>()
                    / dump.heads as f64;
                if w > best.1 {
                    best = (p, w);
                }
            }
            best.0
        })
        .collect();
    let forward = attended.windows(2).filter(|w| w[1] >= w[0]).count();
    Ok(forward as f64 / (steps - 1) as f64)
}

/// Groups dumps by instance id, keeping input order within each group.
pub fn group_by_instance(dumps: Vec<AttentionDump>) -> BTreeMap<String, Vec<AttentionDump>> {
    let mut out: BTreeMap<String, Vec<AttentionDump>> = BTreeMap::new();
    for d in dumps {
        out.entry(d.instance_id.clone()).or_default().push(d);
    }
    out
}

/// Element-wise mean of equally long per-layer series.
pub fn mean_series(series: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = series.first() else {
        return Vec::new();
    };
    let mut out = vec![0.0; first.len()];
    for s in series {
        for (o, v) in out.iter_mut().zip(s) {
            *o += v / series.len() as f64;
        }
    }
    out
}
