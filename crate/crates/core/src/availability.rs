//! Per-node availability estimation.
//!
//! A node is available when it completes computation plus communication
//! within the round deadline. The estimators here track that signal three
//! ways: an EWMA of the deadline indicator, history-window success rates for
//! computation and communication separately, and an empirical recovery
//! probability for nodes that recently missed deadlines. The sampling
//! pipeline consumes the window form; the EWMA and the recovery-augmented
//! baseline estimate are exposed for diagnostics.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Estimator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityParams {
    /// Round deadline in milliseconds.
    pub t_max_ms: f64,
    /// EWMA decay; weight kept by the previous estimate.
    pub lambda: f64,
    /// History window length in rounds.
    pub window_w: usize,
    /// Participation-rate threshold for the computation history bit.
    pub tau_c: f64,
    /// Latency threshold for the communication history bit.
    pub tau_lat_ms: f64,
    /// Packet-loss threshold for the communication history bit.
    pub tau_loss: f64,
    /// Recovery prior used when no failures have been observed yet.
    pub beta_prior: f64,
}

impl Default for AvailabilityParams {
    fn default() -> Self {
        Self {
            t_max_ms: 100.0,
            lambda: 0.9,
            window_w: 20,
            tau_c: 0.7,
            tau_lat_ms: 100.0,
            tau_loss: 0.4,
            beta_prior: 0.5,
        }
    }
}

impl AvailabilityParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            errs.push(format!("lambda must be in (0,1), got {}", self.lambda));
        }
        if self.t_max_ms <= 0.0 {
            errs.push(format!("t_max_ms must be positive, got {}", self.t_max_ms));
        }
        if self.window_w == 0 {
            errs.push("window_w must be positive".into());
        }
        if !(self.tau_c > 0.0 && self.tau_c < 1.0) {
            errs.push(format!("tau_c must be in (0,1), got {}", self.tau_c));
        }
        if self.tau_lat_ms <= 0.0 {
            errs.push(format!("tau_lat_ms must be positive, got {}", self.tau_lat_ms));
        }
        if !(self.tau_loss > 0.0 && self.tau_loss < 1.0) {
            errs.push(format!("tau_loss must be in (0,1), got {}", self.tau_loss));
        }
        if !(0.0..=1.0).contains(&self.beta_prior) {
            errs.push(format!("beta_prior must be in [0,1], got {}", self.beta_prior));
        }
        errs
    }
}

/// Rolling per-node state consumed by the estimators.
///
/// Updated by exactly one writer per round (the simulation loop); the
/// estimator functions read snapshots and are pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTelemetry {
    pub node_id: u32,
    /// Window of computation-success bits (participation rate above `tau_c`).
    comp_history: VecDeque<bool>,
    /// Window of communication-success bits (latency and loss under their
    /// thresholds).
    comm_history: VecDeque<bool>,
    /// EWMA of the deadline indicator.
    pub ewma_availability: f64,
    /// Recovery-augmented baseline availability estimate (diagnostic).
    pub baseline_estimate: f64,
    pub last_latency_ms: f64,
    pub last_loss_rate: f64,
    pub last_participation_round: Option<u64>,
    /// Window of per-round failure flags.
    fail_history: VecDeque<bool>,
    /// Rounds in which this node was asked to work.
    pub rounds_observed: u64,
    /// Rounds in which it completed within the deadline.
    pub rounds_participated: u64,
    window_w: usize,
}

impl NodeTelemetry {
    /// New-node telemetry, seeded with one synthetic success in each history
    /// so newcomers have defined availability and nonzero selection
    /// probability.
    pub fn new(node_id: u32, params: &AvailabilityParams) -> Self {
        let mut comp_history = VecDeque::with_capacity(params.window_w);
        let mut comm_history = VecDeque::with_capacity(params.window_w);
        comp_history.push_back(true);
        comm_history.push_back(true);
        Self {
            node_id,
            comp_history,
            comm_history,
            ewma_availability: 1.0,
            baseline_estimate: 1.0,
            last_latency_ms: 0.0,
            last_loss_rate: 0.0,
            last_participation_round: None,
            fail_history: VecDeque::with_capacity(params.window_w),
            rounds_observed: 1,
            rounds_participated: 1,
            window_w: params.window_w,
        }
    }

    pub fn comp_history(&self) -> &VecDeque<bool> {
        &self.comp_history
    }

    pub fn comm_history(&self) -> &VecDeque<bool> {
        &self.comm_history
    }

    /// Failures observed in the current window.
    pub fn failures_in_window(&self) -> u64 {
        self.fail_history.iter().filter(|&&f| f).count() as u64
    }

    /// Recoveries (a failed round followed by a clean one) with both rounds
    /// inside the window.
    pub fn recoveries_in_window(&self) -> u64 {
        self.fail_history
            .iter()
            .zip(self.fail_history.iter().skip(1))
            .filter(|(&prev, &cur)| prev && !cur)
            .count() as u64
    }

    /// Cumulative participation rate among observed rounds.
    pub fn participation_rate(&self) -> f64 {
        if self.rounds_observed == 0 {
            0.0
        } else {
            self.rounds_participated as f64 / self.rounds_observed as f64
        }
    }

    /// Records one round of observations. `selected`/`completed` feed the
    /// participation rate; `failed` is the round-level failure flag (injected
    /// failure or missed deadline); `deadline_met` drives the EWMA.
    pub fn observe_round(
        &mut self,
        round: u64,
        params: &AvailabilityParams,
        latency_ms: f64,
        loss_rate: f64,
        selected: bool,
        completed: bool,
        failed: bool,
        deadline_met: bool,
    ) {
        self.last_latency_ms = latency_ms;
        self.last_loss_rate = loss_rate;
        if selected {
            self.rounds_observed += 1;
            if completed {
                self.rounds_participated += 1;
                self.last_participation_round = Some(round);
            }
        }
        let comp_bit = self.participation_rate() > params.tau_c;
        let comm_bit = latency_ms < params.tau_lat_ms && loss_rate < params.tau_loss;
        push_window(&mut self.comp_history, comp_bit, self.window_w);
        push_window(&mut self.comm_history, comm_bit, self.window_w);
        // Recoveries are transition pairs inside the window, so each counted
        // recovery has its failure in-window too.
        push_window(&mut self.fail_history, failed, self.window_w);
        self.ewma_availability = ewma_update(
            self.ewma_availability,
            if deadline_met { 1 } else { 0 },
            params.lambda,
        );
        if failed {
            let beta = recovery_probability(self, params);
            self.baseline_estimate = predict_availability(self.baseline_estimate, beta);
        } else {
            let (a_comp, a_comm) =
                window_availability(self, params).unwrap_or((0.0, 0.0));
            self.baseline_estimate = overall_availability(a_comp, a_comm);
        }
    }
}

fn push_window(buf: &mut VecDeque<bool>, bit: bool, w: usize) {
    buf.push_back(bit);
    while buf.len() > w {
        buf.pop_front();
    }
}

/// 1 iff the node finished computation plus communication within the
/// deadline (inclusive).
pub fn deadline_indicator(t_comp_ms: f64, t_comm_ms: f64, t_max_ms: f64) -> u8 {
    debug_assert!(t_comp_ms >= 0.0 && t_comm_ms >= 0.0 && t_max_ms >= 0.0);
    u8::from(t_comp_ms + t_comm_ms <= t_max_ms)
}

/// EWMA step: `lambda * prev + (1 - lambda) * indicator`.
pub fn ewma_update(prev: f64, indicator: u8, lambda: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&prev));
    debug_assert!(lambda > 0.0 && lambda < 1.0);
    lambda * prev + (1.0 - lambda) * f64::from(indicator)
}

/// Mean computation/communication success over the history window.
pub fn window_availability(
    telemetry: &NodeTelemetry,
    _params: &AvailabilityParams,
) -> Result<(f64, f64)> {
    if telemetry.comp_history.is_empty() || telemetry.comm_history.is_empty() {
        return Err(Error::EmptyHistory(telemetry.node_id));
    }
    let mean = |h: &VecDeque<bool>| h.iter().filter(|&&b| b).count() as f64 / h.len() as f64;
    Ok((mean(&telemetry.comp_history), mean(&telemetry.comm_history)))
}

/// Overall availability: product of the two window rates.
pub fn overall_availability(a_comp: f64, a_comm: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&a_comp) && (0.0..=1.0).contains(&a_comm));
    a_comp * a_comm
}

/// Empirical recovery probability: recoveries over failures in the window,
/// falling back to the configured prior when no failures were observed.
pub fn recovery_probability(telemetry: &NodeTelemetry, params: &AvailabilityParams) -> f64 {
    let failures = telemetry.failures_in_window();
    if failures == 0 {
        params.beta_prior
    } else {
        telemetry.recoveries_in_window() as f64 / failures as f64
    }
}

/// Baseline availability prediction: the previous estimate plus the chance a
/// currently-failed node returns. Non-decreasing in both arguments.
pub fn predict_availability(prev_tilde_a: f64, beta: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&prev_tilde_a) && (0.0..=1.0).contains(&beta));
    prev_tilde_a + (1.0 - prev_tilde_a) * beta
}
