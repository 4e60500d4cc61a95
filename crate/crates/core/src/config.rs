//! Experiment configuration.
//!
//! One structured file drives a whole experiment; every parameter is named
//! after the quantity it sets (lambda, tau_lat_ms, tau_corr, alpha, p_f,
//! c_threshold, ...) so a config line can be traced straight to the estimator
//! it feeds. Validation is exhaustive: nothing runs until every complaint is
//! listed.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::availability::AvailabilityParams;
use crate::error::{Error, Result};
use crate::failure::{FailureConfig, NoiseProfile};
use crate::overlay::OverlayConfig;
use crate::selection::SelectionPolicy;
use crate::task::TaskConfig;
use crate::trace::{BasePattern, GroupSpec};

/// Population, rounds and training knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub name: String,
    pub n_logical_clients: usize,
    pub n_physical_workers: usize,
    pub rounds: u64,
    pub labels_per_client: usize,
    pub seeds: Vec<u64>,
    pub local_epochs: usize,
    pub learning_rate: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "experiment".to_string(),
            n_logical_clients: 100,
            n_physical_workers: 10,
            rounds: 50,
            labels_per_client: 2,
            seeds: vec![1, 2, 3, 4, 5],
            local_epochs: 3,
            learning_rate: 0.1,
        }
    }
}

/// Correlation-model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSection {
    /// Blend weight between trace and runtime co-failure evidence.
    pub alpha: f64,
    /// Gamma threshold for correlated-group membership.
    pub tau_corr: f64,
}

impl Default for CorrelationSection {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            tau_corr: 0.5,
        }
    }
}

/// How the base on/off pattern of each synthetic trace group is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternConfig {
    /// Square waves; group `g` is shifted by `g * phase_step`.
    Periodic {
        on_steps: usize,
        off_steps: usize,
        phase_step: usize,
    },
    /// Independent two-state Markov chains per group.
    Markov { stay_on: f64, stay_off: f64 },
}

/// Where availability traces come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TraceSource {
    /// Synthetic correlated groups of `group_size` consecutive nodes.
    Synthesize {
        steps: usize,
        group_size: usize,
        flip_prob: f64,
        pattern: PatternConfig,
    },
    /// Traces loaded from a JSON-lines file (`{device_id, bits}` per line).
    File { path: PathBuf },
}

impl Default for TraceSource {
    fn default() -> Self {
        TraceSource::Synthesize {
            steps: 200,
            group_size: 5,
            flip_prob: 0.02,
            pattern: PatternConfig::Markov {
                stay_on: 0.95,
                stay_off: 0.88,
            },
        }
    }
}

impl TraceSource {
    /// Expands the source into per-group specs for `n` nodes.
    pub fn group_specs(&self, n: usize) -> Vec<GroupSpec> {
        match self {
            TraceSource::Synthesize {
                group_size,
                flip_prob,
                pattern,
                ..
            } => {
                let mut specs = Vec::new();
                let mut remaining = n;
                let mut g = 0usize;
                while remaining > 0 {
                    let size = (*group_size).min(remaining);
                    let base = match *pattern {
                        PatternConfig::Periodic {
                            on_steps,
                            off_steps,
                            phase_step,
                        } => BasePattern::Periodic {
                            on_steps,
                            off_steps,
                            phase: g * phase_step,
                        },
                        PatternConfig::Markov { stay_on, stay_off } => {
                            BasePattern::Markov { stay_on, stay_off }
                        }
                    };
                    specs.push(GroupSpec {
                        size,
                        pattern: base,
                        flip_prob: *flip_prob,
                    });
                    remaining -= size;
                    g += 1;
                }
                specs
            }
            TraceSource::File { .. } => Vec::new(),
        }
    }
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub selection: SelectionPolicy,
    pub availability: AvailabilityParams,
    pub correlation: CorrelationSection,
    pub overlay: OverlayConfig,
    pub failure: FailureConfig,
    pub noise: NoiseProfile,
    pub traces: TraceSource,
    pub task: TaskConfig,
    /// Output directory; the CLI may override it from the environment.
    pub output_dir: Option<PathBuf>,
    /// Export per-round gamma matrix and penalty vector CSVs.
    pub export_correlation: bool,
    /// Include telemetry snapshots in the round logs.
    pub debug_telemetry: bool,
}

impl ExperimentConfig {
    /// Validates every section, collecting all complaints before refusing.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let e = &self.experiment;
        if e.n_logical_clients < 2 {
            errs.push("experiment.n_logical_clients must be at least 2".into());
        }
        if e.n_physical_workers == 0 {
            errs.push("experiment.n_physical_workers must be at least 1".into());
        }
        if e.labels_per_client == 0 || e.labels_per_client > self.task.n_classes {
            errs.push(format!(
                "experiment.labels_per_client must be in 1..={}, got {}",
                self.task.n_classes, e.labels_per_client
            ));
        }
        if e.seeds.is_empty() {
            errs.push("experiment.seeds must not be empty".into());
        }
        if e.learning_rate <= 0.0 {
            errs.push(format!(
                "experiment.learning_rate must be positive, got {}",
                e.learning_rate
            ));
        }
        errs.extend(self.selection.validate().into_iter().map(|m| format!("selection.{m}")));
        errs.extend(
            self.availability
                .validate()
                .into_iter()
                .map(|m| format!("availability.{m}")),
        );
        if !(0.0..=1.0).contains(&self.correlation.alpha) {
            errs.push(format!(
                "correlation.alpha must be in [0,1], got {}",
                self.correlation.alpha
            ));
        }
        if !(0.0..1.0).contains(&self.correlation.tau_corr) {
            errs.push(format!(
                "correlation.tau_corr must be in [0,1), got {}",
                self.correlation.tau_corr
            ));
        }
        errs.extend(self.overlay.validate().into_iter().map(|m| format!("overlay.{m}")));
        errs.extend(self.failure.validate().into_iter().map(|m| format!("failure.{m}")));
        errs.extend(self.noise.validate().into_iter().map(|m| format!("noise.{m}")));
        errs.extend(self.task.validate().into_iter().map(|m| format!("task.{m}")));
        match &self.traces {
            TraceSource::Synthesize {
                steps,
                group_size,
                flip_prob,
                ..
            } => {
                if *steps == 0 {
                    errs.push("traces.steps must be positive".into());
                }
                if *group_size == 0 {
                    errs.push("traces.group_size must be positive".into());
                }
                if !(0.0..=1.0).contains(flip_prob) {
                    errs.push(format!("traces.flip_prob must be in [0,1], got {flip_prob}"));
                }
            }
            TraceSource::File { path } => {
                if path.as_os_str().is_empty() {
                    errs.push("traces.path must not be empty".into());
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_carries_paper_defaults() {
        let config = ExperimentConfig::default();
        config.validate().unwrap();
        assert_eq!(config.availability.lambda, 0.9);
        assert_eq!(config.availability.tau_lat_ms, 100.0);
        assert_eq!(config.availability.tau_loss, 0.4);
        assert_eq!(config.availability.tau_c, 0.7);
        assert_eq!(config.overlay.k_neighbors, 4);
        assert_eq!(config.selection.target_count, 5);
        assert_eq!(config.overlay.latency_fail_ms, 100.0);
    }

    #[test]
    fn validation_collects_all_errors() {
        let mut config = ExperimentConfig::default();
        config.experiment.n_logical_clients = 0;
        config.experiment.seeds.clear();
        config.availability.lambda = 1.5;
        config.failure.p_f = 2.0;
        let err = config.validate().unwrap_err();
        match err {
            Error::InvalidConfig(msgs) => {
                assert!(msgs.len() >= 4, "got {msgs:?}");
                assert!(msgs.iter().any(|m| m.contains("n_logical_clients")));
                assert!(msgs.iter().any(|m| m.contains("lambda")));
                assert!(msgs.iter().any(|m| m.contains("p_f")));
            }
            other => panic!("expected InvalidConfig, got {other:?}"),
        }
    }

    #[test]
    fn group_specs_cover_population() {
        let source = TraceSource::Synthesize {
            steps: 100,
            group_size: 7,
            flip_prob: 0.0,
            pattern: PatternConfig::Periodic {
                on_steps: 5,
                off_steps: 5,
                phase_step: 2,
            },
        };
        let specs = source.group_specs(20);
        assert_eq!(specs.iter().map(|s| s.size).sum::<usize>(), 20);
        assert_eq!(specs.len(), 3);
        assert_eq!(specs.last().unwrap().size, 6);
    }
}
