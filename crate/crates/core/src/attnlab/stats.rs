//! Small numerical kernels: entropy, Jensen-Shannon divergence, variance and
//! rank correlation.

use super::AnalysisError;

/// Shannon entropy in bits. Zero-probability terms contribute nothing.
pub fn entropy_bits(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
}

/// Generalized Jensen-Shannon divergence of `k` equally weighted
/// distributions: H(mean) - mean(H), in bits, within `[0, log2 k]`.
pub fn jensen_shannon(dists: &[Vec<f64>]) -> f64 {
    let k = dists.len();
    if k == 0 {
        return 0.0;
    }
    let n = dists[0].len();
    let mut mean = vec![0.0; n];
    for d in dists {
        for (m, x) in mean.iter_mut().zip(d) {
            *m += x / k as f64;
        }
    }
    let mean_entropy = dists.iter().map(|d| entropy_bits(d)).sum::<f64>() / k as f64;
    (entropy_bits(&mean) - mean_entropy).max(0.0)
}

/// Population variance (divides by n).
pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// 1-based ranks; tied values share the average of their ranks.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(AnalysisError::TooFew { need: 3, got: xs.len() });
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(AnalysisError::Undefined("NaN in series".into()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys)).ok_or_else(|| AnalysisError::Undefined("constant series".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn jsd_examples() {
        let same = vec![vec![0.2, 0.8], vec![0.2, 0.8], vec![0.2, 0.8]];
        assert_eq!(jensen_shannon(&same), 0.0);
        let disjoint = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!((jensen_shannon(&disjoint) - 1.0).abs() < 1e-12);
        // (0.5, 0.5) vs (1, 0): mean (0.75, 0.25)
        let oracle = {
            let h_mean = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
            h_mean - (1.0 + 0.0) / 2.0
        };
        let got = jensen_shannon(&[vec![0.5, 0.5], vec![1.0, 0.0]]);
        assert!((got - oracle).abs() < 1e-9);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 40.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn variance_population() {
        assert_eq!(population_variance(&[3.0, -3.0]), 9.0);
        assert_eq!(population_variance(&[2.0, 2.0, 2.0]), 0.0);
    }

    proptest! {
        #[test]
        fn spearman_monotone_invariant(
            pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30)
        ) {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(rho) = spearman(&xs, &ys) {
                prop_assert!((-1.0..=1.0).contains(&rho));
                let tx: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x).collect();
                let rho2 = spearman(&tx, &ys).unwrap();
                prop_assert!((rho - rho2).abs() < 1e-9);
            }
        }

        #[test]
        fn jsd_bounded(raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 2..6)) {
            let dists: Vec<Vec<f64>> = raw
                .iter()
                .map(|r| { let s: f64 = r.iter().sum(); r.iter().map(|x| x / s).collect() })
                .collect();
            let j = jensen_shannon(&dists);
            prop_assert!(j >= 0.0 && j <= (dists.len() as f64).log2() + 1e-12);
        }
    }
}
