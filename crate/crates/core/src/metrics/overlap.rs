//! N-gram and subsequence overlap kernels: BLEU, ROUGE-2, ROUGE-L and
//! BLEU-based discrepancy. Inputs are pre-tokenized.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::MetricError;

pub type Counts<'a> = HashMap<&'a [String], usize>;

/// Counts the order-`n` n-grams of `tokens`.
pub fn ngram_counts(tokens: &[String], n: usize) -> Counts<'_> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    None,
    /// Adds one to numerator and denominator of precisions for n >= 2.
    AddOne,
}

/// Clipped match and candidate totals per order plus the length pair used
/// for the brevity penalty. Summing these over instances gives corpus BLEU.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add(&mut self, other: &BleuStats) {
        if self.matches.is_empty() {
            self.matches = vec![0; other.matches.len()];
            self.totals = vec![0; other.totals.len()];
        }
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }

    /// Geometric mean of the precisions times the brevity penalty.
    pub fn score(&self, smoothing: Smoothing) -> f64 {
        if self.cand_len == 0 || self.matches.is_empty() {
            return 0.0;
        }
        let max_n = self.matches.len();
        let mut log_sum = 0.0;
        for (i, (&m, &t)) in self.matches.iter().zip(&self.totals).enumerate() {
            let (m, t) = match smoothing {
                Smoothing::AddOne if i >= 1 => (m + 1, t + 1),
                _ => (m, t),
            };
            if m == 0 || t == 0 {
                return 0.0;
            }
            log_sum += (m as f64 / t as f64).ln();
        }
        let geo = (log_sum / max_n as f64).exp();
        let bp = if self.cand_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        };
        geo * bp
    }
}

/// Reference length closest to `c`; the shorter one wins ties.
fn closest_ref_len(c: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

pub fn check_order(max_n: usize) -> Result<(), MetricError> {
    if !(1..=4).contains(&max_n) {
        return Err(MetricError::InvalidOrder(max_n));
    }
    Ok(())
}

/// Clipped n-gram statistics of one candidate against its references.
pub fn bleu_stats(candidate: &[String], references: &[Vec<String>], max_n: usize) -> BleuStats {
    let mut stats = BleuStats {
        matches: vec![0; max_n],
        totals: vec![0; max_n],
        cand_len: candidate.len(),
        ref_len: closest_ref_len(candidate.len(), references),
    };
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let mut max_ref: Counts = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        stats.totals[n - 1] = cand.values().sum();
        stats.matches[n - 1] = cand
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
    }
    stats
}

/// Sentence-level BLEU in [0, 1].
pub fn bleu(
    candidate: &[String],
    references: &[Vec<String>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64, MetricError> {
    check_order(max_n)?;
    Ok(bleu_stats(candidate, references, max_n).score(smoothing))
}

/// Corpus BLEU: counts pooled over all pairs before combining.
pub fn corpus_bleu(
    pairs: &[(Vec<String>, Vec<Vec<String>>)],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64, MetricError> {
    check_order(max_n)?;
    let mut total = BleuStats::default();
    for (c, refs) in pairs {
        total.add(&bleu_stats(c, refs, max_n));
    }
    Ok(total.score(smoothing))
}

fn f1(overlap: usize, cand_total: usize, ref_total: usize) -> f64 {
    if overlap == 0 || cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand_total as f64;
    let r = overlap as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE-N F1 against the best-matching reference.
pub fn rouge_n(candidate: &[String], references: &[Vec<String>], n: usize) -> f64 {
    let cand = ngram_counts(candidate, n);
    let cand_total: usize = cand.values().sum();
    references
        .iter()
        .map(|r| {
            let refc = ngram_counts(r, n);
            let overlap = cand
                .iter()
                .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
                .sum();
            f1(overlap, cand_total, refc.values().sum())
        })
        .fold(0.0, f64::max)
}

pub fn rouge_2(candidate: &[String], references: &[Vec<String>]) -> f64 {
    rouge_n(candidate, references, 2)
}

/// Longest common subsequence length.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1 (equal precision/recall weight), max over references.
pub fn rouge_l(candidate: &[String], references: &[Vec<String>]) -> f64 {
    references
        .iter()
        .map(|r| f1(lcs_len(candidate, r), candidate.len(), r.len()))
        .fold(0.0, f64::max)
}

/// One minus the mean smoothed sentence BLEU over ordered candidate pairs.
pub fn discrepancy(candidates: &[Vec<String>], max_n: usize) -> Result<f64, MetricError> {
    check_order(max_n)?;
    let k = candidates.len();
    if k < 2 {
        return Err(MetricError::TooFewCandidates(k));
    }
    let mut scores = Vec::with_capacity(k * (k - 1));
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let refs = std::slice::from_ref(&candidates[j]);
                scores.push(bleu_stats(&candidates[i], refs, max_n).score(Smoothing::AddOne));
            }
        }
    }
    // summing in sorted order makes the result independent of list order
    scores.sort_by(f64::total_cmp);
    Ok(1.0 - scores.iter().sum::<f64>() / scores.len() as f64)
}
