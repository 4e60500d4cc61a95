//! Client-selection policies.
//!
//! Classic-PSP samples a fixed number of nodes uniformly at random from the
//! currently-online pool, consulting no metadata. AW-PSP filters out failed
//! nodes and nodes entangled in currently-failing correlated clusters,
//! computes each survivor's sampling probability from its availability,
//! recovery chance and correlation penalty, weights it by a participation
//! rotation factor into a score, and greedily refines the top-ranked pool
//! for class-label coverage.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    ClassicPsp,
    AwPsp,
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicyKind::ClassicPsp => write!(f, "classic_psp"),
            PolicyKind::AwPsp => write!(f, "aw_psp"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub kind: PolicyKind,
    /// Nodes to select per round.
    pub target_count: usize,
    /// Baseline uniform sampling probability `p`.
    pub base_p: f64,
    /// Freshness decay constant in rounds.
    pub freshness_tau: f64,
    /// Draw Bernoulli inclusions from the sampling probabilities instead of
    /// deterministic rank-then-greedy selection.
    pub bernoulli: bool,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self {
            kind: PolicyKind::AwPsp,
            target_count: 5,
            base_p: 1.0,
            freshness_tau: 10.0,
            bernoulli: false,
        }
    }
}

impl SelectionPolicy {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.target_count == 0 {
            errs.push("target_count must be at least 1".into());
        }
        if !(self.base_p > 0.0 && self.base_p <= 1.0) {
            errs.push(format!("base_p must be in (0,1], got {}", self.base_p));
        }
        if self.freshness_tau <= 0.0 {
            errs.push(format!("freshness_tau must be positive, got {}", self.freshness_tau));
        }
        errs
    }
}

/// Final sampling probability: the immediate availability, lifted by the
/// recovery chance for the unavailable mass, and downweighted by the
/// correlation penalty. Always in `[0, base_p]`.
pub fn sampling_probability(
    a_comp: f64,
    a_comm: f64,
    beta: f64,
    rho_clamped: f64,
    base_p: f64,
) -> f64 {
    debug_assert!((0.0..=1.0).contains(&a_comp));
    debug_assert!((0.0..=1.0).contains(&a_comm));
    debug_assert!((0.0..=1.0).contains(&beta));
    debug_assert!((0.0..=1.0).contains(&rho_clamped));
    let avail = a_comp * a_comm;
    base_p * (avail + (1.0 - avail) * beta) * (1.0 - rho_clamped)
}

/// Exponentially decaying recency score; nodes that never participated get
/// 1 so newcomers are never starved.
pub fn freshness(last_participation: Option<u64>, current_round: u64, freshness_tau: f64) -> f64 {
    match last_participation {
        None => 1.0,
        Some(last) => {
            debug_assert!(current_round >= last);
            let dr = (current_round - last) as f64;
            (-dr / freshness_tau).exp()
        }
    }
}

/// Complement of [`freshness`]: grows toward 1 the longer a node has sat
/// idle, and is 1 for nodes that never participated.
///
/// The selection score uses this weight. Scoring by recency itself locks
/// selection onto whoever participated last round and starves everyone
/// else; the complement rotates participation across the available pool.
pub fn staleness_weight(
    last_participation: Option<u64>,
    current_round: u64,
    freshness_tau: f64,
) -> f64 {
    match last_participation {
        None => 1.0,
        Some(_) => 1.0 - freshness(last_participation, current_round, freshness_tau),
    }
}

/// Everything AW-PSP needs to know about one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u32,
    pub a_comp: f64,
    pub a_comm: f64,
    pub beta: f64,
    pub rho_clamped: f64,
    /// Participation-rotation weight multiplying the sampling probability
    /// into the score (see [`staleness_weight`]).
    pub selection_weight: f64,
    pub labels: BTreeSet<usize>,
    /// Failed the metadata-based failure detector this round.
    pub detector_failed: bool,
    /// Member of a correlated cluster with a currently-failed node.
    pub in_failed_cluster: bool,
}

/// One round's selection record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRound {
    pub round: u64,
    pub policy: PolicyKind,
    /// Candidates that survived filtering, in ranked order.
    pub candidates: Vec<u32>,
    /// Sampling probabilities aligned with `candidates` (empty for
    /// Classic-PSP, which consults no metadata).
    pub probabilities: Vec<f64>,
    /// Scores aligned with `candidates` (empty for Classic-PSP).
    pub scores: Vec<f64>,
    pub selected: Vec<u32>,
    pub excluded_correlated: BTreeSet<u32>,
    pub label_coverage: BTreeSet<usize>,
    /// No node could be selected this round.
    pub stalled: bool,
}

/// Uniform sample without replacement from the online pool.
pub fn select_classic_psp(
    round: u64,
    active: &[u32],
    target_count: usize,
    rng: &mut impl Rng,
) -> SelectionRound {
    let take = target_count.min(active.len());
    let mut selected: Vec<u32> = if take == 0 {
        Vec::new()
    } else {
        rand::seq::index::sample(rng, active.len(), take)
            .into_iter()
            .map(|i| active[i])
            .collect()
    };
    selected.sort_unstable();
    SelectionRound {
        round,
        policy: PolicyKind::ClassicPsp,
        candidates: active.to_vec(),
        probabilities: Vec::new(),
        scores: Vec::new(),
        selected,
        excluded_correlated: BTreeSet::new(),
        label_coverage: BTreeSet::new(),
        stalled: active.is_empty(),
    }
}

/// The AW-PSP pipeline: filter, probability, score, rank, greedy coverage.
pub fn select_aw_psp(
    round: u64,
    candidates: &[Candidate],
    policy: &SelectionPolicy,
    rng: &mut impl Rng,
) -> SelectionRound {
    let excluded_correlated: BTreeSet<u32> = candidates
        .iter()
        .filter(|c| c.in_failed_cluster)
        .map(|c| c.id)
        .collect();
    let eligible: Vec<&Candidate> = candidates
        .iter()
        .filter(|c| !c.detector_failed && !c.in_failed_cluster)
        .collect();

    // Probabilities and scores per candidate; parallelizable, order kept.
    let scored: Vec<(f64, f64)> = par::map_slice(&eligible, |c| {
        let p = sampling_probability(c.a_comp, c.a_comm, c.beta, c.rho_clamped, policy.base_p);
        (p, p * c.selection_weight)
    });

    let mut ranked: Vec<(usize, f64, f64)> = scored
        .iter()
        .enumerate()
        .map(|(i, &(p, s))| (i, p, s))
        .collect();
    ranked.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then(eligible[a.0].id.cmp(&eligible[b.0].id))
    });

    let selected_idx: Vec<usize> = if policy.bernoulli {
        bernoulli_selection(&ranked, &scored, policy, rng)
    } else {
        greedy_coverage(&ranked, &eligible, policy)
    };

    let mut selected: Vec<u32> = selected_idx.iter().map(|&i| eligible[i].id).collect();
    selected.sort_unstable();
    let label_coverage: BTreeSet<usize> = selected_idx
        .iter()
        .flat_map(|&i| eligible[i].labels.iter().copied())
        .collect();
    SelectionRound {
        round,
        policy: PolicyKind::AwPsp,
        candidates: ranked.iter().map(|&(i, _, _)| eligible[i].id).collect(),
        probabilities: ranked.iter().map(|&(_, p, _)| p).collect(),
        scores: ranked.iter().map(|&(_, _, s)| s).collect(),
        selected,
        excluded_correlated,
        label_coverage,
        stalled: eligible.is_empty(),
    }
}

/// Greedy label-coverage refinement over the top `2 * target_count` ranked
/// nodes: repeatedly pick the node adding the most uncovered labels, ties
/// broken by higher score then lower node id.
fn greedy_coverage(
    ranked: &[(usize, f64, f64)],
    eligible: &[&Candidate],
    policy: &SelectionPolicy,
) -> Vec<usize> {
    let pool_size = (2 * policy.target_count).min(ranked.len());
    let mut pool: Vec<(usize, f64)> = ranked[..pool_size]
        .iter()
        .map(|&(i, _, s)| (i, s))
        .collect();
    let mut covered: BTreeSet<usize> = BTreeSet::new();
    let mut picked = Vec::new();
    while picked.len() < policy.target_count && !pool.is_empty() {
        let best = pool
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                let gain_a = eligible[a.0].labels.difference(&covered).count();
                let gain_b = eligible[b.0].labels.difference(&covered).count();
                gain_a
                    .cmp(&gain_b)
                    .then(a.1.partial_cmp(&b.1).unwrap())
                    .then(eligible[b.0].id.cmp(&eligible[a.0].id))
            })
            .map(|(pos, _)| pos)
            .expect("pool non-empty");
        let (idx, _) = pool.remove(best);
        covered.extend(eligible[idx].labels.iter().copied());
        picked.push(idx);
    }
    picked
}

/// Bernoulli mode: include each candidate with its sampling probability,
/// trimming to the target by score when the draw exceeds it.
fn bernoulli_selection(
    ranked: &[(usize, f64, f64)],
    scored: &[(f64, f64)],
    policy: &SelectionPolicy,
    rng: &mut impl Rng,
) -> Vec<usize> {
    // Draw in candidate order so the rng stream does not depend on ranking.
    let included: BTreeSet<usize> = (0..scored.len())
        .filter(|&i| rng.random::<f64>() < scored[i].0)
        .collect();
    ranked
        .iter()
        .filter(|(i, _, _)| included.contains(i))
        .take(policy.target_count)
        .map(|&(i, _, _)| i)
        .collect()
}
