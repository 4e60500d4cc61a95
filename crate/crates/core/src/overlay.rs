//! Simulated DHT metadata layer.
//!
//! The overlay is a key-value metadata store plus a latency-ranked neighbor
//! graph, not a real routed network: the selection and correlation subsystems
//! only need proximity and per-node metadata snapshots. Neighbor lists are
//! the k nearest peers by RTT among those inside the physical- and
//! computation-proximity thresholds, falling back to the unconditional k
//! nearest (flagged) when too few qualify.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::availability::AvailabilityParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayConfig {
    pub k_neighbors: usize,
    /// Physical-proximity threshold on RTT.
    pub tau_d_ms: f64,
    /// Computation-proximity threshold on compute-time difference.
    pub tau_comp_ms: f64,
    /// Latency above this marks a node failed.
    pub latency_fail_ms: f64,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 4,
            tau_d_ms: 200.0,
            tau_comp_ms: 500.0,
            latency_fail_ms: 100.0,
        }
    }
}

impl OverlayConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.k_neighbors == 0 {
            errs.push("k_neighbors must be at least 1".into());
        }
        for (name, v) in [
            ("tau_d_ms", self.tau_d_ms),
            ("tau_comp_ms", self.tau_comp_ms),
            ("latency_fail_ms", self.latency_fail_ms),
        ] {
            if v <= 0.0 {
                errs.push(format!("{name} must be positive, got {v}"));
            }
        }
        errs
    }
}

/// Per-node metadata published to the overlay each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetadata {
    pub node_id: u32,
    pub latency_ms: f64,
    pub loss_rate: f64,
    pub a_comp: f64,
    pub a_comm: f64,
    pub freshness: f64,
    pub last_round_participated: Option<u64>,
    pub recent_failures: u32,
    pub heartbeat_timeout: bool,
}

/// One neighbor entry; `within_thresholds` is false for fallback neighbors
/// taken despite violating the proximity thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u32,
    pub rtt_ms: f64,
    pub within_thresholds: bool,
}

/// Builds each node's ordered neighbor list from a symmetric RTT matrix and
/// per-node compute times.
///
/// Ties on RTT break by ascending node id, so the graph is deterministic.
pub fn build_neighbors(
    rtt: &[Vec<f64>],
    comp_times: &[f64],
    config: &OverlayConfig,
) -> Result<BTreeMap<u32, Vec<Neighbor>>> {
    let n = rtt.len();
    for (i, row) in rtt.iter().enumerate() {
        if row.len() != n {
            return Err(Error::AsymmetricRtt {
                i,
                j: row.len(),
                a: n as f64,
                b: row.len() as f64,
            });
        }
        for j in (i + 1)..n {
            if rtt[i][j] != rtt[j][i] {
                return Err(Error::AsymmetricRtt {
                    i,
                    j,
                    a: rtt[i][j],
                    b: rtt[j][i],
                });
            }
        }
    }
    let mut out = BTreeMap::new();
    for i in 0..n {
        let mut peers: Vec<(f64, u32, bool)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let qualified = rtt[i][j] <= config.tau_d_ms
                    && (comp_times[i] - comp_times[j]).abs() <= config.tau_comp_ms;
                (rtt[i][j], j as u32, qualified)
            })
            .collect();
        peers.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

        let qualified: Vec<&(f64, u32, bool)> = peers.iter().filter(|p| p.2).collect();
        let list: Vec<Neighbor> = if qualified.len() >= config.k_neighbors {
            qualified
                .into_iter()
                .take(config.k_neighbors)
                .map(|&(rtt_ms, id, _)| Neighbor {
                    id,
                    rtt_ms,
                    within_thresholds: true,
                })
                .collect()
        } else {
            peers
                .iter()
                .take(config.k_neighbors)
                .map(|&(rtt_ms, id, q)| Neighbor {
                    id,
                    rtt_ms,
                    within_thresholds: q,
                })
                .collect()
        };
        out.insert(i as u32, list);
    }
    Ok(out)
}

/// Undirected neighbor pairs: (i,j) is a pair when either lists the other.
pub fn neighbor_pairs(neighbors: &BTreeMap<u32, Vec<Neighbor>>) -> std::collections::BTreeSet<(u32, u32)> {
    let mut pairs = std::collections::BTreeSet::new();
    for (&i, list) in neighbors {
        for nb in list {
            let (a, b) = if i <= nb.id { (i, nb.id) } else { (nb.id, i) };
            if a != b {
                pairs.insert((a, b));
            }
        }
    }
    pairs
}

/// Failure detection from published metadata: latency or loss beyond their
/// thresholds, or a missed heartbeat. Monotone in latency and loss.
pub fn detect_failure(
    meta: &NodeMetadata,
    config: &OverlayConfig,
    params: &AvailabilityParams,
) -> bool {
    meta.latency_ms > config.latency_fail_ms
        || meta.loss_rate > params.tau_loss
        || meta.heartbeat_timeout
}

/// Append-only metadata store with per-round snapshot isolation.
#[derive(Debug, Clone, Default)]
pub struct MetadataStore {
    snapshots: BTreeMap<u32, Vec<(u64, NodeMetadata)>>,
}

impl MetadataStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, node: u32) {
        self.snapshots.entry(node).or_default();
    }

    /// Publishes an immutable snapshot for `node` at `round`.
    pub fn publish(&mut self, node: u32, round: u64, meta: NodeMetadata) -> Result<()> {
        let log = self
            .snapshots
            .get_mut(&node)
            .ok_or(Error::UnknownNode(node))?;
        log.push((round, meta));
        Ok(())
    }

    /// Most recent snapshot at or before `round`.
    pub fn query(&self, node: u32, round: u64) -> Result<&NodeMetadata> {
        let log = self.snapshots.get(&node).ok_or(Error::UnknownNode(node))?;
        log.iter()
            .rev()
            .find(|(r, _)| *r <= round)
            .map(|(_, m)| m)
            .ok_or(Error::NoSnapshot { node, round })
    }
}
