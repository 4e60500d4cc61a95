//! The round-based federated learning loop.
//!
//! Each round advances the trace clock, perturbs telemetry, injects failures,
//! selects clients under the configured policy, maps the selected logical
//! clients onto physical workers in waves, trains locally, aggregates by
//! sample count, evaluates over the classes still covered by active nodes,
//! and updates telemetry and runtime correlation state. Everything is
//! deterministic given the configuration and seed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::availability::{
    deadline_indicator, recovery_probability, window_availability, NodeTelemetry,
};
use crate::config::{ExperimentConfig, TraceSource};
use crate::correlation::{CorrelationState, ProximityWeights};
use crate::error::{Error, Result};
use crate::failure::{
    correlated_round_failures, inject_independent, inject_telemetry_noise, FailureMode,
    LinkSample,
};
use crate::fairness::{
    avg_within_class_variance, gini, kl_from_uniform, unseen_classes, var_of_class_means,
    FairnessReport, RoundLossSample,
};
use crate::overlay::{build_neighbors, detect_failure, neighbor_pairs, NodeMetadata};
use crate::par;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::selection::{
    freshness, select_aw_psp, select_classic_psp, staleness_weight, Candidate, PolicyKind,
    SelectionRound,
};
use crate::task::{train_epochs, BlobTask, LearningTask, SampleRef};
use crate::trace::{synthesize_traces, trace_correlation, AvailabilityTrace};

/// One node's slice of the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPartition {
    pub node_id: u32,
    pub class_labels: BTreeSet<usize>,
    /// Sample references `(class, index)` into the task's training pools.
    pub samples: Vec<SampleRef>,
    pub samples_per_class: BTreeMap<usize, usize>,
}

impl DataPartition {
    pub fn total_samples(&self) -> usize {
        self.samples.len()
    }
}

/// Round-robin label assignment with per-class pools split evenly among
/// holders: node `i` holds labels `(i*L + t) mod C` for `t < L`, so global
/// coverage is maximal and every class has the same number of holders when
/// `n*L` is a multiple of `C`.
pub fn partition_data(
    n_nodes: usize,
    labels_per_client: usize,
    task: &dyn LearningTask,
) -> Result<Vec<DataPartition>> {
    let n_classes = task.n_classes();
    if labels_per_client == 0 || labels_per_client > n_classes {
        return Err(Error::InvalidPartition(format!(
            "labels_per_client must be in 1..={n_classes}, got {labels_per_client}"
        )));
    }
    // Holder lists per class, in node order.
    let mut holders: Vec<Vec<u32>> = vec![Vec::new(); n_classes];
    let mut labels: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_nodes];
    for i in 0..n_nodes {
        for t in 0..labels_per_client {
            let c = (i * labels_per_client + t) % n_classes;
            if labels[i].insert(c) {
                holders[c].push(i as u32);
            }
        }
    }
    let mut partitions: Vec<DataPartition> = (0..n_nodes)
        .map(|i| DataPartition {
            node_id: i as u32,
            class_labels: labels[i].clone(),
            samples: Vec::new(),
            samples_per_class: BTreeMap::new(),
        })
        .collect();
    for (c, hs) in holders.iter().enumerate() {
        if hs.is_empty() {
            continue;
        }
        let pool = task.train_count(c);
        let per = pool / hs.len();
        let rem = pool % hs.len();
        let mut cursor = 0usize;
        for (k, &node) in hs.iter().enumerate() {
            let take = per + usize::from(k < rem);
            let p = &mut partitions[node as usize];
            for idx in cursor..cursor + take {
                p.samples.push((c, idx));
            }
            if take > 0 {
                p.samples_per_class.insert(c, take);
            }
            cursor += take;
        }
    }
    if let Some(p) = partitions.iter().find(|p| p.samples.is_empty()) {
        return Err(Error::EmptyPartition(p.node_id));
    }
    Ok(partitions)
}

/// Mapping of selected logical clients onto physical workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavePlan {
    pub waves: Vec<Vec<u32>>,
}

impl WavePlan {
    pub fn wave_count(&self) -> usize {
        self.waves.len()
    }
}

/// `ceil(m / physical)` waves of at most `physical` clients each, in
/// selection order.
pub fn plan_waves(selected: &[u32], physical: usize) -> WavePlan {
    assert!(physical >= 1);
    WavePlan {
        waves: selected.chunks(physical).map(|c| c.to_vec()).collect(),
    }
}

/// Weighted average of parameter vectors; weights are normalized to sum 1.
pub fn aggregate(updates: &[(Vec<f64>, f64)]) -> Result<Vec<f64>> {
    let Some(((first, _), rest)) = updates.split_first() else {
        return Err(Error::InvalidPartition("empty update list".into()));
    };
    let dim = first.len();
    for (u, _) in rest {
        if u.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: u.len(),
            });
        }
    }
    let total: f64 = updates.iter().map(|(_, w)| w).sum();
    assert!(total > 0.0, "aggregate weights must be positive");
    let mut out = vec![0.0; dim];
    for (u, w) in updates {
        let wn = w / total;
        for (o, v) in out.iter_mut().zip(u) {
            *o += wn * v;
        }
    }
    Ok(out)
}

/// Accuracy over covered classes only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean over covered classes; `None` when nothing is covered.
    pub mean_accuracy: Option<f64>,
    pub per_class: BTreeMap<usize, f64>,
}

/// Evaluates the model on the test pool, restricted to `covered` classes;
/// uncovered classes are absent from the result rather than counted as
/// errors.
pub fn evaluate(
    task: &dyn LearningTask,
    params: &[f64],
    covered: &BTreeSet<usize>,
) -> Evaluation {
    if covered.is_empty() {
        return Evaluation {
            mean_accuracy: None,
            per_class: BTreeMap::new(),
        };
    }
    let all = task.per_class_test_accuracy(params);
    let per_class: BTreeMap<usize, f64> = covered
        .iter()
        .filter(|&&c| c < all.len())
        .map(|&c| (c, all[c]))
        .collect();
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Evaluation {
        mean_accuracy: Some(mean),
        per_class,
    }
}

/// Per-node loss delta from local training, logged for utility analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossDelta {
    pub node_id: u32,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Everything recorded about one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub trace_step: usize,
    pub failed: Vec<u32>,
    pub active_count: usize,
    pub selection: SelectionRound,
    pub wave_sizes: Vec<usize>,
    pub completed: Vec<u32>,
    pub stalled: bool,
    pub accuracy: Option<f64>,
    pub per_class_accuracy: BTreeMap<usize, f64>,
    pub fairness: FairnessReport,
    pub loss_deltas: Vec<LossDelta>,
    /// Clamped correlation penalty per node, present when correlation export
    /// is enabled.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub penalties: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub telemetry_snapshot: Option<Vec<NodeMetadata>>,
}

/// Full log of one run (one policy, one seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub policy: PolicyKind,
    pub seed: u64,
    pub n_logical_clients: usize,
    pub n_physical_workers: usize,
    pub rounds: u64,
    pub records: Vec<RoundRecord>,
    pub cumulative_selection_counts: Vec<u64>,
    pub final_gini: Option<f64>,
    /// Blended gamma matrix at the end of the run, present when correlation
    /// export is enabled.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_gamma: Option<Vec<Vec<f64>>>,
}

/// Runs one experiment (one policy, one seed) to completion.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunLog> {
    config.validate()?;
    let n = config.experiment.n_logical_clients;
    let traces = load_traces(config, seed)?;
    if traces.len() != n {
        return Err(Error::InvalidConfig(vec![format!(
            "trace count {} does not match n_logical_clients {}",
            traces.len(),
            n
        )]));
    }
    let trace_len = traces[0].len();
    let corr_matrix = trace_correlation(&traces)?;

    // Static topology: per-node link positions and compute times.
    let mut topo_rng = stream_rng(seed, Stream::Topology, 0);
    let positions: Vec<f64> = (0..n)
        .map(|_| rand::Rng::random_range(&mut topo_rng, 10.0..140.0))
        .collect();
    let comp_times: Vec<f64> = (0..n)
        .map(|_| rand::Rng::random_range(&mut topo_rng, 20.0..60.0))
        .collect();
    let rtt: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { positions[i] + positions[j] })
                .collect()
        })
        .collect();
    let neighbors = build_neighbors(&rtt, &comp_times, &config.overlay)?;
    let pairs = neighbor_pairs(&neighbors);
    let weights = ProximityWeights::from_rtt(&rtt, config.overlay.tau_d_ms);
    let mut corr_state = CorrelationState::new(
        corr_matrix.clone(),
        config.correlation.alpha,
        config.correlation.tau_corr,
    );

    // Task data varies with the run seed unless pinned via task.seed.
    let mut task_config = config.task.clone();
    task_config.seed = derive_seed(seed, 0x7461736b, config.task.seed);
    let task = BlobTask::new(task_config);
    let partitions = partition_data(n, config.experiment.labels_per_client, &task)?;

    let mut telemetry: Vec<NodeTelemetry> = (0..n)
        .map(|i| NodeTelemetry::new(i as u32, &config.availability))
        .collect();
    let mut model = task.initial_parameters();
    let mut cumulative_counts = vec![0u64; n];
    let mut records = Vec::with_capacity(config.experiment.rounds as usize);

    for round in 0..config.experiment.rounds {
        let trace_step = (round as usize) % trace_len;

        // Telemetry perturbation for every node.
        let mut noise_rng = stream_rng(seed, Stream::TelemetryNoise, round);
        let links: Vec<LinkSample> = inject_telemetry_noise(n, &config.noise, &mut noise_rng);

        // Failure injection.
        let all_nodes: Vec<u32> = (0..n as u32).collect();
        let metadata: Vec<NodeMetadata> = (0..n)
            .map(|i| NodeMetadata {
                node_id: i as u32,
                latency_ms: links[i].latency_ms,
                loss_rate: links[i].loss_rate,
                a_comp: 0.0,
                a_comm: 0.0,
                freshness: 0.0,
                last_round_participated: telemetry[i].last_participation_round,
                recent_failures: telemetry[i].failures_in_window() as u32,
                heartbeat_timeout: false,
            })
            .collect();
        let failed: BTreeSet<u32> = match config.failure.mode {
            FailureMode::IndependentProb => {
                let mut rng = stream_rng(seed, Stream::FailureInjection, round);
                inject_independent(&all_nodes, config.failure.p_f, &mut rng)
            }
            FailureMode::IndependentTelemetry => (0..n as u32)
                .filter(|&i| {
                    detect_failure(&metadata[i as usize], &config.overlay, &config.availability)
                })
                .collect(),
            FailureMode::Correlated => {
                let unavailable: BTreeSet<u32> = (0..n as u32)
                    .filter(|&i| !traces[i as usize].is_available(trace_step))
                    .collect();
                correlated_round_failures(&corr_matrix, config.failure.c_threshold, &unavailable)
            }
        };
        let active: Vec<u32> = (0..n as u32).filter(|i| !failed.contains(i)).collect();

        // Penalty vector at selection time, exported for offline analysis.
        let penalties = config.export_correlation.then(|| {
            (0..n as u32)
                .map(|i| corr_state.penalty(&weights, i).1)
                .collect::<Vec<f64>>()
        });

        // Selection.
        let mut sel_rng = stream_rng(seed, Stream::Selection, round);
        let selection = match config.selection.kind {
            PolicyKind::ClassicPsp => select_classic_psp(
                round,
                &active,
                config.selection.target_count,
                &mut sel_rng,
            ),
            PolicyKind::AwPsp => {
                let candidates: Vec<Candidate> = par::map_range(n, |i| {
                    let id = i as u32;
                    let tel = &telemetry[i];
                    let (a_comp, a_comm) = window_availability(tel, &config.availability)
                        .expect("histories are seeded");
                    let beta = recovery_probability(tel, &config.availability);
                    let (_, rho_clamped) = corr_state.penalty(&weights, id);
                    let group = corr_state.correlated_group(id);
                    let in_failed_cluster = group.iter().any(|j| failed.contains(j));
                    Candidate {
                        id,
                        a_comp,
                        a_comm,
                        beta,
                        rho_clamped,
                        selection_weight: staleness_weight(
                            tel.last_participation_round,
                            round,
                            config.selection.freshness_tau,
                        ),
                        labels: partitions[i].class_labels.clone(),
                        detector_failed: failed.contains(&id)
                            || detect_failure(&metadata[i], &config.overlay, &config.availability),
                        in_failed_cluster,
                    }
                });
                select_aw_psp(round, &candidates, &config.selection, &mut sel_rng)
            }
        };

        // Wave execution: selected clients train in ceil(m/P) batches. A
        // selected node completes only if it meets the round deadline.
        let plan = plan_waves(&selection.selected, config.experiment.n_physical_workers);
        let mut updates: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut completed = Vec::new();
        let mut loss_deltas = Vec::new();
        for wave in &plan.waves {
            let results = par::map_slice(wave, |&id| {
                let i = id as usize;
                let meets = deadline_indicator(
                    comp_times[i],
                    links[i].latency_ms,
                    config.availability.t_max_ms,
                ) == 1;
                let (params, before, after) = train_epochs(
                    &task,
                    &model,
                    &partitions[i].samples,
                    config.experiment.local_epochs,
                    config.experiment.learning_rate,
                );
                (id, meets, params, before, after)
            });
            for (id, meets, params, before, after) in results {
                loss_deltas.push(LossDelta {
                    node_id: id,
                    loss_before: before,
                    loss_after: after,
                });
                if meets {
                    completed.push(id);
                    updates.push((params, partitions[id as usize].total_samples() as f64));
                }
            }
        }
        let stalled = updates.is_empty();
        if !stalled {
            model = aggregate(&updates)?;
        }

        // Evaluation over classes covered by at least one active node.
        let covered: BTreeSet<usize> = active
            .iter()
            .flat_map(|&i| partitions[i as usize].class_labels.iter().copied())
            .collect();
        let eval = evaluate(&task, &model, &covered);

        // Fairness metrics over the selected set.
        for &id in &selection.selected {
            cumulative_counts[id as usize] += 1;
        }
        let mut class_counts = vec![0u64; task.n_classes()];
        let mut loss_samples: Vec<RoundLossSample> = Vec::new();
        for &id in &selection.selected {
            let p = &partitions[id as usize];
            for (&c, &cnt) in &p.samples_per_class {
                class_counts[c] += cnt as u64;
            }
            let losses = task.per_sample_losses(&model, &p.samples);
            loss_samples.extend(p.samples.iter().zip(losses).map(|(&(c, _), loss)| {
                RoundLossSample {
                    class_label: c,
                    node_id: id,
                    loss,
                }
            }));
        }
        let fairness = FairnessReport {
            round,
            avg_within_class_var: avg_within_class_variance(&loss_samples),
            var_of_class_means: var_of_class_means(&loss_samples),
            kl_divergence: kl_from_uniform(&class_counts, task.n_classes()),
            unseen_class_count: unseen_classes(&class_counts),
            gini: gini(&cumulative_counts),
        };

        // State updates.
        corr_state.record_round_failures(&failed, &pairs);
        for i in 0..n {
            let id = i as u32;
            let selected = selection.selected.contains(&id);
            let completed_node = completed.contains(&id);
            let deadline_met = deadline_indicator(
                comp_times[i],
                links[i].latency_ms,
                config.availability.t_max_ms,
            ) == 1;
            telemetry[i].observe_round(
                round,
                &config.availability,
                links[i].latency_ms,
                links[i].loss_rate,
                selected,
                completed_node,
                failed.contains(&id) || !deadline_met,
                deadline_met,
            );
        }

        let telemetry_snapshot = config.debug_telemetry.then(|| {
            (0..n)
                .map(|i| {
                    let (a_comp, a_comm) = window_availability(
                        &telemetry[i],
                        &config.availability,
                    )
                    .unwrap_or((0.0, 0.0));
                    NodeMetadata {
                        a_comp,
                        a_comm,
                        freshness: freshness(
                            telemetry[i].last_participation_round,
                            round,
                            config.selection.freshness_tau,
                        ),
                        ..metadata[i].clone()
                    }
                })
                .collect()
        });

        records.push(RoundRecord {
            round,
            trace_step,
            failed: failed.iter().copied().collect(),
            active_count: active.len(),
            selection,
            wave_sizes: plan.waves.iter().map(|w| w.len()).collect(),
            completed,
            stalled,
            accuracy: eval.mean_accuracy,
            per_class_accuracy: eval.per_class,
            fairness,
            loss_deltas,
            penalties,
            telemetry_snapshot,
        });
    }

    let final_gini = gini(&cumulative_counts);
    let final_gamma = config.export_correlation.then(|| {
        (0..n as u32)
            .map(|i| {
                (0..n as u32)
                    .map(|j| {
                        if i == j {
                            1.0
                        } else {
                            corr_state.gamma(i, j).expect("i != j")
                        }
                    })
                    .collect()
            })
            .collect()
    });
    Ok(RunLog {
        policy: config.selection.kind,
        seed,
        n_logical_clients: n,
        n_physical_workers: config.experiment.n_physical_workers,
        rounds: config.experiment.rounds,
        records,
        cumulative_selection_counts: cumulative_counts,
        final_gini,
        final_gamma,
    })
}

/// Loads or synthesizes the availability traces for a run.
pub fn load_traces(config: &ExperimentConfig, seed: u64) -> Result<Vec<AvailabilityTrace>> {
    match &config.traces {
        TraceSource::Synthesize { steps, .. } => {
            let specs = config.traces.group_specs(config.experiment.n_logical_clients);
            synthesize_traces(*steps, &specs, seed)
        }
        TraceSource::File { path } => {
            let text = std::fs::read_to_string(path)?;
            let mut traces = Vec::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                traces.push(serde_json::from_str::<AvailabilityTrace>(line)?);
            }
            Ok(traces)
        }
    }
}

/// Runs every seed in the config, in parallel when enabled; results are in
/// seed order.
pub fn run_suite(config: &ExperimentConfig) -> Result<Vec<RunLog>> {
    config.validate()?;
    let seeds = config.experiment.seeds.clone();
    let logs = par::map_slice(&seeds, |&seed| run_experiment(config, seed));
    logs.into_iter().collect()
}
