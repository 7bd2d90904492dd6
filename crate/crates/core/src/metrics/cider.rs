//! CIDEr (original formulation, no Gaussian length penalty or clipping).
//!
//! For each order n in 1..=4 a sentence becomes a vector of n-gram counts
//! weighted by `ln(N / max(1, df))`, where `df` is the number of instances
//! whose reference set contains the n-gram. The score is the cosine to each
//! reference averaged over references, then averaged over n. Values lie in
//! [0, 1]; the conventional x10 is applied only for display.

use std::collections::{HashMap, HashSet};

use super::overlap::ngram_counts;
use super::MetricError;

pub const CIDER_MAX_N: usize = 4;

/// Document frequencies of every reference n-gram, per order.
#[derive(Debug, Clone)]
pub struct CiderIdf {
    df: Vec<HashMap<Vec<String>, usize>>,
    n_docs: usize,
}

impl CiderIdf {
    /// One document per instance: the union of its references' n-grams.
    pub fn from_reference_sets(sets: &[Vec<Vec<String>>]) -> Result<Self, MetricError> {
        if sets.len() < 2 {
            return Err(MetricError::TooFewInstances {
                need: 2,
                got: sets.len(),
            });
        }
        let mut df = vec![HashMap::new(); CIDER_MAX_N];
        for refs in sets {
            for (n, table) in df.iter_mut().enumerate() {
                let seen: HashSet<&[String]> = refs.iter().flat_map(|r| ngram_counts(r, n + 1).into_keys()).collect();
                for g in seen {
                    *table.entry(g.to_vec()).or_insert(0) += 1;
                }
            }
        }
        Ok(CiderIdf { df, n_docs: sets.len() })
    }

    pub fn idf(&self, gram: &[String]) -> f64 {
        let df = self.df[gram.len() - 1].get(gram).copied().unwrap_or(0).max(1);
        (self.n_docs as f64 / df as f64).ln()
    }

    fn vector<'a>(&self, tokens: &'a [String], n: usize) -> HashMap<&'a [String], f64> {
        ngram_counts(tokens, n)
            .into_iter()
            .map(|(g, c)| (g, c as f64 * self.idf(g)))
            .collect()
    }

    /// CIDEr of one candidate against its references, in [0, 1].
    pub fn score(&self, candidate: &[String], references: &[Vec<String>]) -> f64 {
        if references.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for n in 1..=CIDER_MAX_N {
            let cv = self.vector(candidate, n);
            let cn: f64 = cv.values().map(|v| v * v).sum();
            let mut sim = 0.0;
            for r in references {
                let rv = self.vector(r, n);
                let rn: f64 = rv.values().map(|v| v * v).sum();
                if cn == 0.0 || rn == 0.0 {
                    continue;
                }
                let dot: f64 = cv.iter().map(|(g, v)| v * rv.get(g).copied().unwrap_or(0.0)).sum();
                sim += dot / (cn * rn).sqrt();
            }
            total += sim / references.len() as f64;
        }
        total / CIDER_MAX_N as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_candidate_scores_one() {
        let sets = vec![vec![t("a dog catches a frisbee")], vec![t("people dance to music")]];
        let idf = CiderIdf::from_reference_sets(&sets).unwrap();
        let got = idf.score(&t("a dog catches a frisbee"), &sets[0]);
        assert!((got - 1.0).abs() < 1e-12, "{got}");
        assert_eq!(idf.score(&t("zebra"), &sets[0]), 0.0);
    }

    #[test]
    fn idf_uses_instance_frequency() {
        let sets = vec![vec![t("a b"), t("a c")], vec![t("a d")], vec![t("e")]];
        let idf = CiderIdf::from_reference_sets(&sets).unwrap();
        assert!((idf.idf(&t("a")) - (3.0f64 / 2.0).ln()).abs() < 1e-15);
        assert!((idf.idf(&t("e")) - 3.0f64.ln()).abs() < 1e-15);
        assert!((idf.idf(&t("unseen")) - 3.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn needs_two_instances() {
        assert!(CiderIdf::from_reference_sets(&[vec![t("a")]]).is_err());
    }
}
