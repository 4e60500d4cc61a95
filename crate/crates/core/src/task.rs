//! Pluggable learning task.
//!
//! The default task is multinomial logistic regression on synthetic Gaussian
//! class blobs: cheap enough to run whole experiment sweeps on a desk, while
//! preserving the distribution-level phenomena the simulator studies
//! (coverage collapse, class imbalance). Anything implementing
//! [`LearningTask`] can be swapped in.


use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Stream};

/// A sample reference: `(class, index within the class's training pool)`.
pub type SampleRef = (usize, usize);

/// Interface the federated loop trains against.
pub trait LearningTask: Sync {
    /// Flat parameter dimension.
    fn param_dim(&self) -> usize;
    fn n_classes(&self) -> usize;
    /// Training-pool size for one class.
    fn train_count(&self, class: usize) -> usize;
    fn initial_parameters(&self) -> Vec<f64>;
    /// Mean loss over the referenced samples.
    fn loss(&self, params: &[f64], samples: &[SampleRef]) -> f64;
    /// Mean loss and its gradient.
    fn loss_and_grad(&self, params: &[f64], samples: &[SampleRef]) -> (f64, Vec<f64>);
    /// Loss of each referenced sample individually.
    fn per_sample_losses(&self, params: &[f64], samples: &[SampleRef]) -> Vec<f64>;
    /// Accuracy on the held-out test pool, per class.
    fn per_class_test_accuracy(&self, params: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub n_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of the class-center distribution.
    pub center_scale: f64,
    /// Within-class noise standard deviation.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            dim: 20,
            train_per_class: 200,
            test_per_class: 50,
            center_scale: 3.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n_classes < 2 {
            errs.push("n_classes must be at least 2".into());
        }
        if self.dim == 0 {
            errs.push("dim must be positive".into());
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            errs.push("train_per_class and test_per_class must be positive".into());
        }
        if self.noise_std < 0.0 || self.center_scale < 0.0 {
            errs.push("center_scale and noise_std must be non-negative".into());
        }
        errs
    }
}

/// Multinomial logistic regression on Gaussian class blobs.
///
/// Parameters are a flat `n_classes * (dim + 1)` vector: per-class weights
/// followed by a bias.
#[derive(Debug, Clone)]
pub struct BlobTask {
    config: TaskConfig,
    /// `[class][sample][dim]`
    train: Vec<Vec<Vec<f64>>>,
    test: Vec<Vec<Vec<f64>>>,
}

impl BlobTask {
    pub fn new(config: TaskConfig) -> Self {
        let centers: Vec<Vec<f64>> = (0..config.n_classes)
            .map(|c| {
                let mut rng = stream_rng(config.seed, Stream::TaskData, c as u64);
                (0..config.dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * config.center_scale
                    })
                    .collect()
            })
            .collect();
        let sample_pool = |per_class: usize, tag: u64| -> Vec<Vec<Vec<f64>>> {
            (0..config.n_classes)
                .map(|c| {
                    let mut rng =
                        stream_rng(config.seed, Stream::TaskData, tag + 1000 + c as u64);
                    (0..per_class)
                        .map(|_| {
                            centers[c]
                                .iter()
                                .map(|&m| {
                                    let z: f64 = StandardNormal.sample(&mut rng);
                                    m + z * config.noise_std
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        };
        let train = sample_pool(config.train_per_class, 0);
        let test = sample_pool(config.test_per_class, 1 << 20);
        Self { config, train, test }
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    fn logits(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let d = self.config.dim;
        (0..self.config.n_classes)
            .map(|k| {
                let row = &params[k * (d + 1)..(k + 1) * (d + 1)];
                row[..d].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + row[d]
            })
            .collect()
    }

    /// Log-softmax probabilities, stabilized by the max logit.
    fn log_probs(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let logits = self.logits(params, x);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        logits.into_iter().map(|l| l - log_z).collect()
    }
}

impl LearningTask for BlobTask {
    fn param_dim(&self) -> usize {
        self.config.n_classes * (self.config.dim + 1)
    }

    fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    fn train_count(&self, class: usize) -> usize {
        self.train[class].len()
    }

    fn initial_parameters(&self) -> Vec<f64> {
        vec![0.0; self.param_dim()]
    }

    fn loss(&self, params: &[f64], samples: &[SampleRef]) -> f64 {
        assert!(!samples.is_empty());
        let total: f64 = samples
            .iter()
            .map(|&(c, i)| -self.log_probs(params, &self.train[c][i])[c])
            .sum();
        total / samples.len() as f64
    }

    fn loss_and_grad(&self, params: &[f64], samples: &[SampleRef]) -> (f64, Vec<f64>) {
        assert!(!samples.is_empty());
        let d = self.config.dim;
        let mut grad = vec![0.0; self.param_dim()];
        let mut total = 0.0;
        for &(c, i) in samples {
            let x = &self.train[c][i];
            let log_p = self.log_probs(params, x);
            total -= log_p[c];
            for k in 0..self.config.n_classes {
                let delta = log_p[k].exp() - f64::from(u8::from(k == c));
                let row = &mut grad[k * (d + 1)..(k + 1) * (d + 1)];
                for (g, xi) in row[..d].iter_mut().zip(x) {
                    *g += delta * xi;
                }
                row[d] += delta;
            }
        }
        let n = samples.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (total / n, grad)
    }

    fn per_sample_losses(&self, params: &[f64], samples: &[SampleRef]) -> Vec<f64> {
        samples
            .iter()
            .map(|&(c, i)| -self.log_probs(params, &self.train[c][i])[c])
            .collect()
    }

    fn per_class_test_accuracy(&self, params: &[f64]) -> Vec<f64> {
        (0..self.config.n_classes)
            .map(|c| {
                let correct = self.test[c]
                    .iter()
                    .filter(|x| {
                        let logits = self.logits(params, x);
                        let argmax = logits
                            .iter()
                            .enumerate()
                            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                            .map(|(k, _)| k)
                            .unwrap();
                        argmax == c
                    })
                    .count();
                correct as f64 / self.test[c].len() as f64
            })
            .collect()
    }
}

/// Plain full-batch gradient descent with a fixed step, `epochs` steps.
/// Returns `(updated_params, loss_before, loss_after)`.
pub fn train_epochs(
    task: &dyn LearningTask,
    params: &[f64],
    samples: &[SampleRef],
    epochs: usize,
    learning_rate: f64,
) -> (Vec<f64>, f64, f64) {
    let mut w = params.to_vec();
    let loss_before = task.loss(&w, samples);
    let mut last = loss_before;
    for _ in 0..epochs {
        let (_, grad) = task.loss_and_grad(&w, samples);
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= learning_rate * gi;
        }
        last = task.loss(&w, samples);
    }
    (w, loss_before, last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_task(seed: u64) -> BlobTask {
        BlobTask::new(TaskConfig {
            n_classes: 3,
            dim: 4,
            train_per_class: 12,
            test_per_class: 8,
            center_scale: 3.0,
            noise_std: 1.0,
            seed,
        })
    }

    fn all_samples(task: &BlobTask) -> Vec<SampleRef> {
        (0..task.n_classes())
            .flat_map(|c| (0..task.train_count(c)).map(move |i| (c, i)))
            .collect()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let task = small_task(1);
        let samples = all_samples(&task);
        let w0 = task.initial_parameters();
        let (w, before, after) = train_epochs(&task, &w0, &samples, 0, 0.1);
        assert_eq!(w, w0);
        assert_eq!(before, after);
    }

    #[test]
    fn three_epochs_strictly_decrease_loss() {
        let task = small_task(2);
        let samples = all_samples(&task);
        let w0 = task.initial_parameters();
        let (_, before, after) = train_epochs(&task, &w0, &samples, 3, 0.1);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let task = small_task(3);
        let samples = all_samples(&task);
        let mut rng = stream_rng(7, Stream::TaskData, 999);
        let h = 1e-5;
        for _ in 0..100 {
            let w: Vec<f64> = (0..task.param_dim())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let (_, grad) = task.loss_and_grad(&w, &samples);
            // Check a random subset of coordinates per point.
            for _ in 0..4 {
                let i = rng.random_range(0..w.len());
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += h;
                wm[i] -= h;
                let fd = (task.loss(&wp, &samples) - task.loss(&wm, &samples)) / (2.0 * h);
                let denom = grad[i].abs().max(1e-3);
                assert!(
                    (fd - grad[i]).abs() / denom < 1e-5,
                    "coord {i}: fd {fd} vs grad {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let task = BlobTask::new(TaskConfig {
            n_classes: 4,
            dim: 8,
            train_per_class: 40,
            test_per_class: 20,
            center_scale: 4.0,
            noise_std: 1.0,
            seed: 5,
        });
        let samples = all_samples(&task);
        let (w, _, _) = train_epochs(&task, &task.initial_parameters(), &samples, 60, 0.2);
        let acc = task.per_class_test_accuracy(&w);
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        assert!(mean > 0.9, "mean accuracy {mean}");
    }

    #[test]
    fn data_generation_is_deterministic() {
        let a = small_task(11);
        let b = small_task(11);
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = small_task(12);
        assert_ne!(a.train, c.train);
    }
}
