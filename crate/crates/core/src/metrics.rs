use serde::{Deserialize, Serialize};

use crate::autodiff::logloss;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub mean_logloss: f64,
    /// Embedding parameters only.
    pub params: u64,
    pub n_examples: usize,
}

/// Rank-statistic AUC; tied scores earn half credit.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(
            "auc",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.iter().filter(|&&y| y == 0.0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::Label("auc labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "auc needs both classes ({n_pos} positives, {n_neg} negatives)"
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Evaluation(format!("score {s}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based average ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1.0).count();
        rank_sum += avg_rank * pos_in_group as f64;
        i = j;
    }
    let p = n_pos as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * n_neg as f64))
}

/// Mean clamped binary logloss of probabilities.
pub fn mean_logloss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::dim(
            "mean_logloss",
            format!("{} scores vs {} labels", probs.len(), labels.len()),
        ));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Label("logloss labels must be 0 or 1".into()));
    }
    Ok(probs.iter().zip(labels).map(|(&p, &y)| logloss(p, y)).sum::<f64>() / probs.len() as f64)
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::dim(
            "pearson",
            format!("need two equal-length series of >= 2, got {} and {}", a.len(), b.len()),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("pearson of a constant series".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// O(P*N) pairwise count.
    fn brute_auc(scores: &[f64], labels: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1.0 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0.0 {
                    continue;
                }
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3, 0.3], &[1.0, 0.0]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1.0, 1.0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auc_matches_pairwise_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            // coarse scores force ties
            let s: Vec<f64> = (0..50).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
            let mut y: Vec<f64> = (0..50).map(|_| rng.random_range(0..2) as f64).collect();
            y[0] = 1.0;
            y[1] = 0.0;
            assert!((auc(&s, &y).unwrap() - brute_auc(&s, &y)).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(
            s in proptest::collection::vec(-5.0f64..5.0, 4..60),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut y: Vec<f64> = s.iter().map(|_| rng.random_range(0..2) as f64).collect();
            y[0] = 1.0;
            y[1] = 0.0;
            let a = auc(&s, &y).unwrap();
            let t: Vec<f64> = s.iter().map(|v| (0.7 * v).exp() + 3.0).collect();
            prop_assert!((auc(&t, &y).unwrap() - a).abs() < 1e-12);
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let mut sorted = s.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            if sorted.len() == s.len() {
                prop_assert!((a + auc(&neg, &y).unwrap() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn logloss_is_nonnegative(p in proptest::collection::vec(0.0f64..=1.0, 1..30), seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = p.iter().map(|_| rng.random_range(0..2) as f64).collect();
            prop_assert!(mean_logloss(&p, &y).unwrap() >= 0.0);
        }
    }

    #[test]
    fn mean_logloss_examples() {
        let perfect = mean_logloss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((perfect - (-(1.0f64 - 1e-7).ln())).abs() < 1e-15);
        assert!((perfect - 1e-7).abs() < 1e-13);
        let half = mean_logloss(&[0.5, 0.5, 0.5], &[1.0, 0.0, 1.0]).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-15);
        let mixed = mean_logloss(&[0.9, 0.2, 0.6], &[1.0, 0.0, 0.0]).unwrap();
        let hand = (-(0.9f64.ln()) - 0.8f64.ln() - 0.4f64.ln()) / 3.0;
        assert!((mixed - hand).abs() <= 1e-12);
        assert!(matches!(mean_logloss(&[0.5], &[2.0]), Err(Error::Label(_))));
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 4.0, 8.0];
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &b).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&a, &[1.0; 4]), Err(Error::UndefinedMetric(_))));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }
}
