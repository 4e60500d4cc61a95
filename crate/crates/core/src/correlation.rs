//! Blended failure correlation and the proximity-weighted penalty.
//!
//! The static trace correlation and the runtime co-failure fraction are
//! blended by `alpha` into a pairwise score gamma. Nodes whose gamma to a
//! peer exceeds `tau_corr` form that peer's correlated group; the penalty is
//! the proximity-weighted sum of gammas over the group, clamped to [0,1]
//! wherever a probability is formed (the raw sum is kept for diagnostics).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::TraceCorrelationMatrix;

/// Orders a pair so map keys are canonical.
fn ordered(i: u32, j: u32) -> (u32, u32) {
    if i <= j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Static trace correlation plus runtime co-failure counters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationState {
    trace_corr: TraceCorrelationMatrix,
    /// Rounds in which both endpoints of a neighbor pair failed.
    cofail_rounds: BTreeMap<(u32, u32), u64>,
    rounds_elapsed: u64,
    /// Blend weight between trace and runtime evidence.
    pub alpha: f64,
    /// Group-membership threshold on gamma.
    pub tau_corr: f64,
}

impl CorrelationState {
    pub fn new(trace_corr: TraceCorrelationMatrix, alpha: f64, tau_corr: f64) -> Self {
        assert!((0.0..=1.0).contains(&alpha));
        Self {
            trace_corr,
            cofail_rounds: BTreeMap::new(),
            rounds_elapsed: 0,
            alpha,
            tau_corr,
        }
    }

    pub fn n(&self) -> usize {
        self.trace_corr.n()
    }

    pub fn rounds_elapsed(&self) -> u64 {
        self.rounds_elapsed
    }

    pub fn trace_corr(&self) -> &TraceCorrelationMatrix {
        &self.trace_corr
    }

    pub fn cofail_count(&self, i: u32, j: u32) -> u64 {
        self.cofail_rounds.get(&ordered(i, j)).copied().unwrap_or(0)
    }

    /// Records one round of failures: every neighbor pair with both
    /// endpoints failed gets its co-failure count bumped.
    pub fn record_round_failures(
        &mut self,
        failed: &BTreeSet<u32>,
        neighbor_pairs: &BTreeSet<(u32, u32)>,
    ) {
        for &(i, j) in neighbor_pairs {
            if failed.contains(&i) && failed.contains(&j) {
                *self.cofail_rounds.entry(ordered(i, j)).or_insert(0) += 1;
            }
        }
        self.rounds_elapsed += 1;
    }

    /// Runtime co-failure fraction for a pair; 0 before any round elapsed.
    pub fn fail_fraction(&self, i: u32, j: u32) -> f64 {
        if self.rounds_elapsed == 0 {
            0.0
        } else {
            self.cofail_count(i, j) as f64 / self.rounds_elapsed as f64
        }
    }

    /// Blended correlation score in [0,1]. Negative trace correlations are
    /// clamped to 0: anti-correlated nodes pose no co-failure risk.
    pub fn gamma(&self, i: u32, j: u32) -> Result<f64> {
        if i == j {
            return Err(Error::SelfCorrelation(i));
        }
        let trace = self.trace_corr.get(i as usize, j as usize).max(0.0);
        Ok(self.alpha * trace + (1.0 - self.alpha) * self.fail_fraction(i, j))
    }

    /// Peers whose gamma to `i` strictly exceeds `tau_corr`.
    pub fn correlated_group(&self, i: u32) -> BTreeSet<u32> {
        (0..self.n() as u32)
            .filter(|&j| j != i)
            .filter(|&j| self.gamma(i, j).expect("i != j") > self.tau_corr)
            .collect()
    }

    /// Correlation penalty for node `i`: proximity-weighted sum of gammas
    /// over its correlated group. Returns `(raw, clamped)`; the clamped form
    /// is what probability formulas consume.
    pub fn penalty(&self, weights: &ProximityWeights, i: u32) -> (f64, f64) {
        let raw: f64 = self
            .correlated_group(i)
            .iter()
            .map(|&j| weights.get(i, j) * self.gamma(i, j).expect("i != j"))
            .sum();
        (raw, raw.min(1.0))
    }
}

/// Symmetric pairwise proximity weights in [0,1]; self-weight excluded.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProximityWeights {
    values: BTreeMap<(u32, u32), f64>,
}

impl ProximityWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, i: u32, j: u32, w: f64) {
        assert!(i != j, "self-weight excluded");
        assert!((0.0..=1.0).contains(&w));
        self.values.insert(ordered(i, j), w);
    }

    /// Weight for a pair; pairs never set weigh 0.
    pub fn get(&self, i: u32, j: u32) -> f64 {
        self.values.get(&ordered(i, j)).copied().unwrap_or(0.0)
    }

    /// Linear latency kernel: `max(0, 1 - rtt/tau_d)` for every pair of the
    /// symmetric RTT matrix.
    pub fn from_rtt(rtt: &[Vec<f64>], tau_d_ms: f64) -> Self {
        let mut w = Self::new();
        let n = rtt.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = (1.0 - rtt[i][j] / tau_d_ms).max(0.0);
                if v > 0.0 {
                    w.set(i as u32, j as u32, v);
                }
            }
        }
        w
    }
}

/// Availability downweighted by the clamped correlation penalty.
pub fn adjusted_availability(tilde_a: f64, rho_clamped: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&tilde_a) && (0.0..=1.0).contains(&rho_clamped));
    tilde_a * (1.0 - rho_clamped)
}
