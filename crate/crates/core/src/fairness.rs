//! Fairness and coverage metrics.
//!
//! Five per-round signals: the average within-class variance of per-sample
//! losses, the variance of per-class mean losses, the KL divergence of class
//! participation from uniform, the count of classes absent from the selected
//! set, and the Gini coefficient of cumulative client participation.
//! Population variance throughout; classes with a single sample contribute
//! zero variance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One per-sample loss observed among the selected nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLossSample {
    pub class_label: usize,
    pub node_id: u32,
    pub loss: f64,
}

/// Per-round fairness report; `None` marks metrics undefined that round
/// (e.g. no covered class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub round: u64,
    pub avg_within_class_var: Option<f64>,
    pub var_of_class_means: Option<f64>,
    pub kl_divergence: Option<f64>,
    pub unseen_class_count: usize,
    pub gini: Option<f64>,
}

fn population_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn group_by_class(samples: &[RoundLossSample]) -> BTreeMap<usize, Vec<f64>> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.class_label).or_default().push(s.loss);
    }
    groups
}

/// Mean over covered classes of the population variance of each class's
/// losses. `None` when no class is covered.
pub fn avg_within_class_variance(samples: &[RoundLossSample]) -> Option<f64> {
    let groups = group_by_class(samples);
    if groups.is_empty() {
        return None;
    }
    let sum: f64 = groups.values().map(|v| population_variance(v)).sum();
    Some(sum / groups.len() as f64)
}

/// Population variance of the per-class mean losses over covered classes.
/// `None` when no class is covered; a single covered class gives 0.
pub fn var_of_class_means(samples: &[RoundLossSample]) -> Option<f64> {
    let groups = group_by_class(samples);
    if groups.is_empty() {
        return None;
    }
    let means: Vec<f64> = groups
        .values()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    Some(population_variance(&means))
}

/// KL divergence of the empirical class distribution from uniform, natural
/// log. Zero-count classes contribute nothing (0 log 0 = 0). `None` when the
/// total count is zero.
pub fn kl_from_uniform(class_counts: &[u64], n_classes: usize) -> Option<f64> {
    assert_eq!(class_counts.len(), n_classes);
    let total: u64 = class_counts.iter().sum();
    if total == 0 {
        return None;
    }
    let u = 1.0 / n_classes as f64;
    let kl = class_counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            p * (p / u).ln()
        })
        .sum();
    Some(kl)
}

/// Number of classes completely absent from the selected set.
pub fn unseen_classes(class_counts: &[u64]) -> usize {
    class_counts.iter().filter(|&&c| c == 0).count()
}

/// Gini coefficient of cumulative selection counts across clients.
///
/// Computed via the sorted O(N log N) form; the pairwise numerator is exact
/// integer arithmetic, so results match the O(N²) definition bit-for-bit.
/// `None` when all counts are zero.
pub fn gini(cumulative_selection_counts: &[u64]) -> Option<f64> {
    let n = cumulative_selection_counts.len();
    let total: u64 = cumulative_selection_counts.iter().sum();
    if n == 0 || total == 0 {
        return None;
    }
    let mut sorted = cumulative_selection_counts.to_vec();
    sorted.sort_unstable();
    // sum_{i,j} |n_i - n_j| = 2 * sum_k (2k - N + 1) * x_(k), ascending.
    let pair_sum: i128 = sorted
        .iter()
        .enumerate()
        .map(|(k, &x)| (2 * k as i128 - n as i128 + 1) * x as i128)
        .sum::<i128>()
        * 2;
    debug_assert!(pair_sum >= 0);
    Some(pair_sum as f64 / (2 * n as u128 * total as u128) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    fn sample(class: usize, loss: f64) -> RoundLossSample {
        RoundLossSample {
            class_label: class,
            node_id: 0,
            loss,
        }
    }

    #[test]
    fn within_class_variance_examples() {
        // Identical losses inside each class.
        let s = vec![sample(0, 2.0), sample(0, 2.0), sample(1, 5.0), sample(1, 5.0)];
        assert_eq!(avg_within_class_variance(&s), Some(0.0));

        // One class with losses {1, 3}: variance 1.
        let s = vec![sample(0, 1.0), sample(0, 3.0)];
        assert_eq!(avg_within_class_variance(&s), Some(1.0));

        assert_eq!(avg_within_class_variance(&[]), None);
    }

    #[test]
    fn within_class_variance_matches_two_pass_oracle() {
        let mut rng = stream_rng(1, Stream::Theory, 0);
        for _ in 0..50 {
            let samples: Vec<RoundLossSample> = (0..60)
                .map(|_| sample(rng.random_range(0..5), rng.random_range(0.0..10.0)))
                .collect();
            let got = avg_within_class_variance(&samples).unwrap();
            // Two-pass oracle.
            let mut by_class: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for s in &samples {
                by_class.entry(s.class_label).or_default().push(s.loss);
            }
            let mut acc = 0.0;
            for losses in by_class.values() {
                let m = losses.iter().sum::<f64>() / losses.len() as f64;
                acc += losses.iter().map(|l| (l - m) * (l - m)).sum::<f64>()
                    / losses.len() as f64;
            }
            let oracle = acc / by_class.len() as f64;
            assert!((got - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn var_of_class_means_examples() {
        let s = vec![sample(0, 2.0), sample(1, 2.0), sample(2, 2.0)];
        assert_eq!(var_of_class_means(&s), Some(0.0));

        // Class means {1, 3}: population variance 1.
        let s = vec![sample(0, 0.5), sample(0, 1.5), sample(1, 3.0)];
        assert_eq!(var_of_class_means(&s), Some(1.0));

        // Single covered class.
        let s = vec![sample(4, 2.0), sample(4, 8.0)];
        assert_eq!(var_of_class_means(&s), Some(0.0));

        assert_eq!(var_of_class_means(&[]), None);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_from_uniform(&[5, 5, 5, 5], 4), Some(0.0));

        let mut counts = vec![0u64; 10];
        counts[3] = 17;
        let kl = kl_from_uniform(&counts, 10).unwrap();
        assert!((kl - 10.0f64.ln()).abs() < 1e-12);

        let kl = kl_from_uniform(&[6, 4], 2).unwrap();
        let expected = 0.6 * (1.2f64).ln() + 0.4 * (0.8f64).ln();
        assert!((kl - expected).abs() < 1e-12);
        assert!((kl - 0.020136).abs() < 1e-4);

        assert_eq!(kl_from_uniform(&[0, 0], 2), None);
    }

    #[test]
    fn unseen_examples() {
        assert_eq!(unseen_classes(&[1, 2, 3]), 0);
        assert_eq!(unseen_classes(&[0, 0, 0]), 3);
        let counts = [4, 0, 2, 0, 1, 7, 0, 9, 3, 5];
        assert_eq!(unseen_classes(&counts), 3);
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[3, 3, 3, 3]), Some(0.0));
        assert_eq!(gini(&[0, 0]), None);

        // One client holds everything: (N-1)/N.
        for n in 2..=32usize {
            let mut counts = vec![0u64; n];
            counts[0] = 17;
            let g = gini(&counts).unwrap();
            let expected = (n - 1) as f64 / n as f64;
            assert!((g - expected).abs() < 1e-15, "n={n}: {g} vs {expected}");
        }
    }

    /// O(N^2) pairwise oracle with the same exact integer arithmetic.
    fn gini_oracle(counts: &[u64]) -> Option<f64> {
        let n = counts.len();
        let total: u64 = counts.iter().sum();
        if n == 0 || total == 0 {
            return None;
        }
        let mut pair_sum: i128 = 0;
        for &a in counts {
            for &b in counts {
                pair_sum += (a as i128 - b as i128).abs();
            }
        }
        Some(pair_sum as f64 / (2 * n as u128 * total as u128) as f64)
    }

    #[test]
    fn gini_matches_pairwise_oracle_exactly() {
        let mut rng = stream_rng(2, Stream::Theory, 1);
        for _ in 0..1000 {
            let n = rng.random_range(1..=32);
            let counts: Vec<u64> = (0..n).map(|_| rng.random_range(0..50)).collect();
            assert_eq!(gini(&counts), gini_oracle(&counts));
        }
    }

    proptest! {
        #[test]
        fn metrics_permutation_invariant(
            counts in proptest::collection::vec(0u64..100, 2..20),
            swap_a in 0usize..20,
            swap_b in 0usize..20,
        ) {
            let mut permuted = counts.clone();
            let (a, b) = (swap_a % counts.len(), swap_b % counts.len());
            permuted.swap(a, b);
            prop_assert_eq!(gini(&counts), gini(&permuted));
            let n = counts.len();
            // KL is invariant under class relabeling, up to summation order.
            match (kl_from_uniform(&counts, n), kl_from_uniform(&permuted, n)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                _ => prop_assert!(false, "definedness must agree"),
            }
            prop_assert_eq!(unseen_classes(&counts), unseen_classes(&permuted));
        }

        #[test]
        fn kl_non_negative_zero_iff_uniform(
            counts in proptest::collection::vec(0u64..50, 2..12),
        ) {
            if let Some(kl) = kl_from_uniform(&counts, counts.len()) {
                prop_assert!(kl >= -1e-15);
                let nonzero: Vec<u64> =
                    counts.iter().copied().filter(|&c| c > 0).collect();
                let uniform = nonzero.len() == counts.len()
                    && nonzero.windows(2).all(|w| w[0] == w[1]);
                if uniform {
                    prop_assert!(kl.abs() < 1e-12);
                } else {
                    prop_assert!(kl > 1e-12);
                }
            }
        }

        #[test]
        fn gini_scale_invariant(
            counts in proptest::collection::vec(0u64..100, 2..16),
            k in 1u64..20,
        ) {
            let scaled: Vec<u64> = counts.iter().map(|&c| c * k).collect();
            match (gini(&counts), gini(&scaled)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-15),
                (None, None) => {}
                _ => prop_assert!(false, "definedness must agree"),
            }
        }

        #[test]
        fn variances_non_negative(
            losses in proptest::collection::vec((0usize..6, 0.0f64..100.0), 1..50),
        ) {
            let samples: Vec<RoundLossSample> = losses
                .into_iter()
                .map(|(c, l)| sample(c, l))
                .collect();
            prop_assert!(avg_within_class_variance(&samples).unwrap() >= 0.0);
            prop_assert!(var_of_class_means(&samples).unwrap() >= 0.0);
        }

        #[test]
        fn gini_in_unit_range(
            counts in proptest::collection::vec(0u64..100, 1..32),
        ) {
            if let Some(g) = gini(&counts) {
                prop_assert!((0.0..1.0).contains(&g));
            }
        }
    }
}
