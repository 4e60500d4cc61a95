use awpsp::config::{ExperimentConfig, PatternConfig, TraceSource};
use awpsp::failure::FailureMode;
use awpsp::selection::PolicyKind;
use awpsp::sim::run_experiment;
use awpsp::task::TaskConfig;

fn scenario(noise: f64, scale: f64, dim: usize, lr: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.experiment.n_logical_clients = 100;
    c.experiment.n_physical_workers = 10;
    c.experiment.rounds = 50;
    c.experiment.labels_per_client = 2;
    c.experiment.learning_rate = lr;
    c.failure.mode = FailureMode::Correlated;
    c.failure.c_threshold = 0.6;
    c.noise.spike_prob = 0.05;
    c.task = TaskConfig { n_classes: 10, dim, train_per_class: 200, test_per_class: 50, center_scale: scale, noise_std: noise, seed: 0 };
    c.traces = TraceSource::Synthesize {
        steps: 200,
        group_size: 5,
        flip_prob: 0.02,
        pattern: PatternConfig::Markov { stay_on: 0.95, stay_off: 0.88 },
    };
    c
}

fn main() {
    for (noise, scale, dim, lr) in [(2.5, 2.0, 10, 0.1), (3.0, 2.0, 10, 0.1), (3.5, 1.5, 10, 0.1)] {
        println!("--- noise={noise} scale={scale} dim={dim} lr={lr}");
        for policy in [PolicyKind::AwPsp, PolicyKind::ClassicPsp] {
            let mut wins = 0;
            for seed in 1..=5u64 {
                let mut c = scenario(noise, scale, dim, lr);
                c.selection.kind = policy;
                let log = run_experiment(&c, seed).unwrap();
                let n_rounds = log.records.len() as f64;
                let mean_unseen: f64 = log.records.iter().map(|r| r.fairness.unseen_class_count as f64).sum::<f64>() / n_rounds;
                let mean_kl: f64 = log.records.iter().filter_map(|r| r.fairness.kl_divergence).sum::<f64>() / n_rounds;
                let last25_var: f64 = log.records.iter().skip(25).filter_map(|r| r.fairness.var_of_class_means).sum::<f64>() / 25.0;
                let last25_wvar: f64 = log.records.iter().skip(25).filter_map(|r| r.fairness.avg_within_class_var).sum::<f64>() / 25.0;
                let acc: f64 = log.records.iter().rev().take(10).filter_map(|r| r.accuracy).sum::<f64>() / 10.0;
                println!(
                    "{policy} seed {seed}: gini={:.3} unseen={:.2} kl={:.3} var_cls={:.5} wvar={:.5} acc={:.3}",
                    log.final_gini.unwrap(), mean_unseen, mean_kl, last25_var, last25_wvar, acc
                );
                let _ = &mut wins;
            }
        }
    }
}
