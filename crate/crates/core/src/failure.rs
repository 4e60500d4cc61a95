//! Per-round failure injection.
//!
//! Two regimes: independent (each node fails with a fixed probability, or is
//! declared failed from its perturbed telemetry) and correlated (failures
//! spread through the thresholded trace-correlation graph). Telemetry
//! perturbation draws baseline latency/loss plus occasional spikes that trip
//! the failure detector.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::trace::TraceCorrelationMatrix;

/// Failure-injection regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    /// Every node fails independently with probability `p_f`.
    IndependentProb,
    /// Failures come from the telemetry detector only.
    IndependentTelemetry,
    /// Failures propagate through correlation above `c_threshold`.
    Correlated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureConfig {
    pub mode: FailureMode,
    /// Independent-mode failure probability.
    pub p_f: f64,
    /// Correlated-mode propagation threshold.
    pub c_threshold: f64,
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self {
            mode: FailureMode::IndependentProb,
            p_f: 0.1,
            c_threshold: 0.5,
        }
    }
}

impl FailureConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.p_f) {
            errs.push(format!("p_f must be in [0,1], got {}", self.p_f));
        }
        if !(0.0..=1.0).contains(&self.c_threshold) {
            errs.push(format!("c_threshold must be in [0,1], got {}", self.c_threshold));
        }
        errs
    }
}

/// Each node fails independently with probability `p_f`.
pub fn inject_independent(nodes: &[u32], p_f: f64, rng: &mut impl Rng) -> BTreeSet<u32> {
    assert!((0.0..=1.0).contains(&p_f));
    nodes
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < p_f)
        .collect()
}

/// Transitive closure of the seed failures under the relation
/// `corr[i][j] > c_threshold`.
///
/// Lower thresholds yield supersets of higher-threshold failure sets for the
/// same seeds.
pub fn inject_correlated(
    corr: &TraceCorrelationMatrix,
    c_threshold: f64,
    seed_failures: &BTreeSet<u32>,
) -> BTreeSet<u32> {
    assert!((0.0..=1.0).contains(&c_threshold));
    let n = corr.n() as u32;
    let mut failed: BTreeSet<u32> = seed_failures.iter().copied().filter(|&i| i < n).collect();
    let mut queue: VecDeque<u32> = failed.iter().copied().collect();
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if j != i
                && !failed.contains(&j)
                && corr.get(i as usize, j as usize) > c_threshold
            {
                failed.insert(j);
                queue.push_back(j);
            }
        }
    }
    failed
}

/// Correlated-mode failures for one round, driven by the availability
/// traces.
///
/// A node's own trace-unavailability is the triggering event; what fails is
/// every node entangled with it above the threshold (and onward,
/// transitively). A trace-unavailable node with no suprathreshold partner
/// drags nobody down and is not itself marked failed, so a threshold above
/// every pairwise correlation injects no failures at all.
pub fn correlated_round_failures(
    corr: &TraceCorrelationMatrix,
    c_threshold: f64,
    trace_unavailable: &BTreeSet<u32>,
) -> BTreeSet<u32> {
    let n = corr.n() as u32;
    let seeds: BTreeSet<u32> = (0..n)
        .filter(|&i| {
            trace_unavailable.iter().any(|&u| {
                u < n && u != i && corr.get(i as usize, u as usize) > c_threshold
            })
        })
        .collect();
    inject_correlated(corr, c_threshold, &seeds)
}

/// Baseline and spike distribution for per-round telemetry perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub base_latency_ms: f64,
    pub latency_jitter_ms: f64,
    pub base_loss: f64,
    pub loss_jitter: f64,
    /// Per-node per-round probability of a latency/loss spike.
    pub spike_prob: f64,
    pub spike_latency_ms: f64,
    pub spike_loss: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            base_latency_ms: 20.0,
            latency_jitter_ms: 5.0,
            base_loss: 0.05,
            loss_jitter: 0.02,
            spike_prob: 0.0,
            spike_latency_ms: 150.0,
            spike_loss: 0.5,
        }
    }
}

impl NoiseProfile {
    /// A profile with no jitter and no spikes: telemetry stays at baseline.
    pub fn quiet() -> Self {
        Self {
            latency_jitter_ms: 0.0,
            loss_jitter: 0.0,
            spike_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.spike_prob) {
            errs.push(format!("spike_prob must be in [0,1], got {}", self.spike_prob));
        }
        if !(0.0..=1.0).contains(&self.base_loss) {
            errs.push(format!("base_loss must be in [0,1], got {}", self.base_loss));
        }
        if self.base_latency_ms < 0.0 {
            errs.push("base_latency_ms must be non-negative".into());
        }
        errs
    }
}

/// One node's perturbed link telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSample {
    pub latency_ms: f64,
    pub loss_rate: f64,
    pub spiked: bool,
}

/// Draws perturbed latency/loss for every node. Deterministic per rng
/// stream.
pub fn inject_telemetry_noise(
    n_nodes: usize,
    profile: &NoiseProfile,
    rng: &mut impl Rng,
) -> Vec<LinkSample> {
    (0..n_nodes)
        .map(|_| {
            let jitter_l = if profile.latency_jitter_ms > 0.0 {
                rng.random_range(-profile.latency_jitter_ms..=profile.latency_jitter_ms)
            } else {
                0.0
            };
            let jitter_p = if profile.loss_jitter > 0.0 {
                rng.random_range(-profile.loss_jitter..=profile.loss_jitter)
            } else {
                0.0
            };
            let spiked = profile.spike_prob > 0.0 && rng.random::<f64>() < profile.spike_prob;
            let latency_ms = (profile.base_latency_ms
                + jitter_l
                + if spiked { profile.spike_latency_ms } else { 0.0 })
            .max(0.0);
            let loss_rate = (profile.base_loss
                + jitter_p
                + if spiked { profile.spike_loss } else { 0.0 })
            .clamp(0.0, 1.0);
            LinkSample {
                latency_ms,
                loss_rate,
                spiked,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;

    fn corr_from(n: usize, entries: &[(usize, usize, f64)]) -> TraceCorrelationMatrix {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        for &(i, j, v) in entries {
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
        TraceCorrelationMatrix::from_values(n, values)
    }

    #[test]
    fn independent_edge_probabilities() {
        let nodes: Vec<u32> = (0..10).collect();
        let mut rng = stream_rng(1, Stream::FailureInjection, 0);
        assert!(inject_independent(&nodes, 0.0, &mut rng).is_empty());
        assert_eq!(inject_independent(&nodes, 1.0, &mut rng).len(), 10);
    }

    #[test]
    fn independent_monte_carlo_mean() {
        let nodes: Vec<u32> = (0..10).collect();
        let mut rng = stream_rng(2, Stream::FailureInjection, 0);
        let trials = 10_000;
        let total: usize = (0..trials)
            .map(|_| inject_independent(&nodes, 0.3, &mut rng).len())
            .sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 3.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn independent_is_reproducible() {
        let nodes: Vec<u32> = (0..50).collect();
        let mut a = stream_rng(9, Stream::FailureInjection, 3);
        let mut b = stream_rng(9, Stream::FailureInjection, 3);
        assert_eq!(
            inject_independent(&nodes, 0.4, &mut a),
            inject_independent(&nodes, 0.4, &mut b)
        );
    }

    #[test]
    fn correlated_group_collapses_below_min_correlation() {
        // Fully co-correlated group of 4 (pairwise 0.6) plus an outsider.
        let entries: Vec<(usize, usize, f64)> = (0..4)
            .flat_map(|i| ((i + 1)..4).map(move |j| (i, j, 0.6)))
            .collect();
        let corr = corr_from(5, &entries);
        let seeds: BTreeSet<u32> = [0].into_iter().collect();
        let failed = inject_correlated(&corr, 0.59, &seeds);
        assert_eq!(failed, (0..4).collect());
    }

    #[test]
    fn correlated_threshold_one_keeps_seeds_only() {
        let corr = corr_from(4, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let seeds: BTreeSet<u32> = [0].into_iter().collect();
        assert_eq!(inject_correlated(&corr, 1.0, &seeds), seeds);
    }

    /// BFS oracle over the thresholded graph.
    fn closure_oracle(
        corr: &TraceCorrelationMatrix,
        c: f64,
        seeds: &BTreeSet<u32>,
    ) -> BTreeSet<u32> {
        let n = corr.n();
        let mut seen: Vec<bool> = vec![false; n];
        let mut stack: Vec<usize> = seeds.iter().map(|&s| s as usize).collect();
        for &s in seeds {
            seen[s as usize] = true;
        }
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && j != i && corr.get(i, j) > c {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| i as u32)
            .collect()
    }

    #[test]
    fn correlated_matches_bfs_oracle_random() {
        let mut rng = stream_rng(5, Stream::FailureInjection, 1);
        for _ in 0..50 {
            let n = 10usize;
            let mut entries = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    entries.push((i, j, rng.random::<f64>()));
                }
            }
            let corr = corr_from(n, &entries);
            let seeds: BTreeSet<u32> =
                (0..n as u32).filter(|_| rng.random::<f64>() < 0.2).collect();
            let c = rng.random::<f64>();
            assert_eq!(
                inject_correlated(&corr, c, &seeds),
                closure_oracle(&corr, c, &seeds)
            );
        }
    }

    #[test]
    fn trace_driven_failures_spare_isolated_unavailable_nodes() {
        // Nodes 0-2 pairwise correlated; node 3 independent.
        let corr = corr_from(4, &[(0, 1, 0.8), (1, 2, 0.8), (0, 2, 0.8)]);
        let unavailable: BTreeSet<u32> = [3].into_iter().collect();
        assert!(correlated_round_failures(&corr, 0.5, &unavailable).is_empty());

        let unavailable: BTreeSet<u32> = [0].into_iter().collect();
        let failed = correlated_round_failures(&corr, 0.5, &unavailable);
        assert_eq!(failed, (0..3).collect());
    }

    #[test]
    fn telemetry_noise_zero_profile_is_baseline() {
        let profile = NoiseProfile::quiet();
        let mut rng = stream_rng(0, Stream::TelemetryNoise, 0);
        let samples = inject_telemetry_noise(5, &profile, &mut rng);
        for s in samples {
            assert_eq!(s.latency_ms, 20.0);
            assert_eq!(s.loss_rate, 0.05);
            assert!(!s.spiked);
        }
    }

    #[test]
    fn telemetry_noise_forced_spike_exceeds_threshold() {
        let profile = NoiseProfile {
            spike_prob: 1.0,
            spike_latency_ms: 200.0,
            ..NoiseProfile::quiet()
        };
        let mut rng = stream_rng(0, Stream::TelemetryNoise, 1);
        for s in inject_telemetry_noise(10, &profile, &mut rng) {
            assert!(s.latency_ms > 100.0);
            assert!(s.spiked);
        }
    }

    #[test]
    fn telemetry_noise_spike_rate_monte_carlo() {
        let profile = NoiseProfile {
            spike_prob: 0.2,
            ..NoiseProfile::default()
        };
        let mut rng = stream_rng(4, Stream::TelemetryNoise, 2);
        let rounds = 1000;
        let nodes = 50;
        let mut spikes = 0usize;
        for _ in 0..rounds {
            spikes += inject_telemetry_noise(nodes, &profile, &mut rng)
                .iter()
                .filter(|s| s.spiked)
                .count();
        }
        let rate = spikes as f64 / (rounds * nodes) as f64;
        assert!((rate - 0.2).abs() < 0.02, "rate {rate}");
    }

    proptest! {
        #[test]
        fn correlated_failures_monotone_in_threshold(
            seed in 0u64..2000,
            c1 in 0.0f64..=1.0,
            c2 in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            let mut rng = stream_rng(seed, Stream::FailureInjection, 7);
            let n = 12usize;
            let mut entries = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    entries.push((i, j, rng.random::<f64>()));
                }
            }
            let corr = corr_from(n, &entries);
            let seeds: BTreeSet<u32> =
                (0..n as u32).filter(|_| rng.random::<f64>() < 0.3).collect();
            let failed_lo = inject_correlated(&corr, lo, &seeds);
            let failed_hi = inject_correlated(&corr, hi, &seeds);
            prop_assert!(failed_lo.is_superset(&failed_hi));
        }

        #[test]
        fn correlated_matches_oracle_up_to_64_nodes(
            seed in 0u64..500,
            n in 2usize..64,
            c in 0.0f64..=1.0,
        ) {
            let mut rng = stream_rng(seed, Stream::FailureInjection, 8);
            let mut entries = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    // Sparse edges keep components interesting.
                    if rng.random::<f64>() < 0.2 {
                        entries.push((i, j, rng.random::<f64>()));
                    }
                }
            }
            let corr = corr_from(n, &entries);
            let seeds: BTreeSet<u32> =
                (0..n as u32).filter(|_| rng.random::<f64>() < 0.15).collect();
            prop_assert_eq!(
                inject_correlated(&corr, c, &seeds),
                closure_oracle(&corr, c, &seeds)
            );
        }
    }
}
