//! Numerical verification of the availability model's analytical guarantees.
//!
//! Five checks: Bayes optimality of the feasibility threshold rule, the
//! Fréchet bound on the multiplicative-factorization error, hazard-based
//! recovery probability, the nonasymptotic consistency decomposition of the
//! sampling probability, and convergence of importance-weighted updates under
//! bounded sampling distortion. Each Monte Carlo check reports its raw gap,
//! the analytic bound, and a `3 * sigma_mc` tolerance.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{stream_rng, Stream};

/// A pair of Bernoulli marginals with controlled dependence.
///
/// `dependence` in [-1, 1] interpolates the joint success probability
/// linearly between the Fréchet lower bound (-1), independence (0), and the
/// Fréchet upper bound (+1), so the factorization error is available in
/// closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependentBernoulliPair {
    pub marginal_c: f64,
    pub marginal_b: f64,
    pub dependence: f64,
}

impl DependentBernoulliPair {
    pub fn new(marginal_c: f64, marginal_b: f64, dependence: f64) -> Self {
        assert!((0.0..=1.0).contains(&marginal_c));
        assert!((0.0..=1.0).contains(&marginal_b));
        assert!((-1.0..=1.0).contains(&dependence));
        Self {
            marginal_c,
            marginal_b,
            dependence,
        }
    }

    /// Joint probability that both succeed.
    pub fn p_both(&self) -> f64 {
        let (ac, ab) = (self.marginal_c, self.marginal_b);
        let indep = ac * ab;
        let upper = ac.min(ab);
        let lower = (ac + ab - 1.0).max(0.0);
        if self.dependence >= 0.0 {
            indep + self.dependence * (upper - indep)
        } else {
            indep + self.dependence * (indep - lower)
        }
    }

    /// Exact factorization error `|P(both) - a_c * a_b|`.
    pub fn kappa(&self) -> f64 {
        (self.p_both() - self.marginal_c * self.marginal_b).abs()
    }

    /// Draws one `(c_ok, b_ok)` sample from the joint.
    pub fn sample(&self, rng: &mut impl Rng) -> (bool, bool) {
        let p11 = self.p_both();
        let p10 = self.marginal_c - p11;
        let p01 = self.marginal_b - p11;
        let u: f64 = rng.random();
        if u < p11 {
            (true, true)
        } else if u < p11 + p10 {
            (true, false)
        } else if u < p11 + p10 + p01 {
            (false, true)
        } else {
            (false, false)
        }
    }
}

/// Outcome of one Fréchet-bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrechetCheck {
    pub empirical_delta: f64,
    pub bound: f64,
    pub sigma_mc: f64,
    pub holds: bool,
}

/// Estimates `P(both succeed)` by Monte Carlo and checks the factorization
/// error against `min(a_c, a_b) - a_c * a_b` within `3 * sigma_mc`.
pub fn check_frechet_bound(
    pair: &DependentBernoulliPair,
    n_samples: usize,
    rng: &mut impl Rng,
) -> FrechetCheck {
    let hits = (0..n_samples)
        .filter(|_| {
            let (c, b) = pair.sample(rng);
            c && b
        })
        .count();
    let p_hat = hits as f64 / n_samples as f64;
    let sigma_mc = (p_hat * (1.0 - p_hat) / n_samples as f64).sqrt();
    let empirical_delta = (p_hat - pair.marginal_c * pair.marginal_b).abs();
    let bound = pair.marginal_c.min(pair.marginal_b) - pair.marginal_c * pair.marginal_b;
    FrechetCheck {
        empirical_delta,
        bound,
        sigma_mc,
        holds: empirical_delta <= bound + 3.0 * sigma_mc,
    }
}

/// Outcome of one hazard-recovery check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardCheck {
    pub empirical_beta: f64,
    pub analytic_beta: f64,
    pub gap: f64,
    pub sigma_mc: f64,
    pub holds: bool,
}

/// Simulates exponential recovery times and compares the empirical
/// within-round recovery fraction to `1 - exp(-lambda * delta_t)`; exact for
/// constant hazard, so the gap must vanish within Monte Carlo error.
pub fn check_hazard_recovery(
    lambda: f64,
    delta_t: f64,
    n_samples: usize,
    rng: &mut impl Rng,
) -> HazardCheck {
    assert!(lambda > 0.0 && delta_t > 0.0);
    let exp = Exp::new(lambda).expect("lambda > 0");
    let hits = (0..n_samples)
        .filter(|_| exp.sample(rng) <= delta_t)
        .count();
    let empirical_beta = hits as f64 / n_samples as f64;
    let analytic_beta = 1.0 - (-lambda * delta_t).exp();
    let sigma_mc = (empirical_beta * (1.0 - empirical_beta) / n_samples as f64)
        .sqrt()
        .max(1.0 / n_samples as f64);
    let gap = (empirical_beta - analytic_beta).abs();
    HazardCheck {
        empirical_beta,
        analytic_beta,
        gap,
        sigma_mc,
        holds: gap <= 3.0 * sigma_mc,
    }
}

/// Resource distribution for the threshold-optimality check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResourceDistribution {
    Normal { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
    PointMass { at: f64 },
}

impl ResourceDistribution {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            ResourceDistribution::Normal { mean, std } => {
                Normal::new(mean, std).expect("std > 0").sample(rng)
            }
            ResourceDistribution::Uniform { lo, hi } => rng.random_range(lo..hi),
            ResourceDistribution::PointMass { at } => at,
        }
    }
}

/// Outcome of the threshold-optimality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCheck {
    /// 0-1 loss of the exact-threshold classifier (must be zero).
    pub exact_loss: f64,
    /// 0-1 loss of the perturbed-threshold classifier.
    pub perturbed_loss: f64,
    /// Fraction of samples between the two thresholds.
    pub mass_between: f64,
    pub holds: bool,
}

/// Confirms the threshold classifier achieves zero 0-1 loss against the
/// deterministic feasibility label, and that a shifted threshold loses
/// exactly on the mass between the thresholds.
pub fn check_threshold_optimality(
    distribution: &ResourceDistribution,
    c_min: f64,
    shift: f64,
    n_samples: usize,
    rng: &mut impl Rng,
) -> ThresholdCheck {
    let c_shifted = c_min + shift;
    let (lo, hi) = (c_min.min(c_shifted), c_min.max(c_shifted));
    let mut exact_errors = 0usize;
    let mut perturbed_errors = 0usize;
    let mut between = 0usize;
    for _ in 0..n_samples {
        let c = distribution.sample(rng);
        let label = c >= c_min;
        let exact = c >= c_min;
        let perturbed = c >= c_shifted;
        exact_errors += usize::from(exact != label);
        perturbed_errors += usize::from(perturbed != label);
        between += usize::from(c >= lo && c < hi);
    }
    let n = n_samples as f64;
    let exact_loss = exact_errors as f64 / n;
    let perturbed_loss = perturbed_errors as f64 / n;
    let mass_between = between as f64 / n;
    // The perturbed rule errs exactly on the mass between the thresholds.
    let holds = exact_loss == 0.0 && (perturbed_loss - mass_between).abs() < 1e-12;
    ThresholdCheck {
        exact_loss,
        perturbed_loss,
        mass_between,
        holds,
    }
}

/// A generative scenario with known dependence, penalty mismatch and
/// recovery error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScenario {
    pub pair: DependentBernoulliPair,
    /// True correlated-failure probability.
    pub rho_true: f64,
    /// Signed penalty mismatch; the model uses `rho_true + eps_rho`.
    pub eps_rho: f64,
    /// True recovery probability.
    pub beta_true: f64,
    /// Signed recovery-estimate error; the model uses `beta_true + eps_beta`.
    pub eps_beta: f64,
    /// Baseline sampling probability.
    pub base_p: f64,
}

/// Outcome of one consistency-bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub sigma_mc: f64,
    pub holds: bool,
}

/// Monte Carlo check of the error decomposition
/// `|p' - p_true| <= p*kappa + p*eps_rho + p*eps_beta + p*a_c*a_b*rho*kappa`.
///
/// Ground truth: a node succeeds when it is resource-feasible (or infeasible
/// but recovering) and not hit by a correlated failure; `p_true` is the
/// baseline probability times that success rate, estimated by simulation.
pub fn check_consistency_bound(
    scenario: &ConsistencyScenario,
    n_samples: usize,
    rng: &mut impl Rng,
) -> ConsistencyCheck {
    let s = scenario;
    let rho_model = (s.rho_true + s.eps_rho).clamp(0.0, 1.0);
    let beta_model = (s.beta_true + s.eps_beta).clamp(0.0, 1.0);
    let eps_rho_eff = (rho_model - s.rho_true).abs();
    let eps_beta_eff = (beta_model - s.beta_true).abs();
    let (ac, ab) = (s.pair.marginal_c, s.pair.marginal_b);
    let avail = ac * ab;
    let p_model = s.base_p * (avail + (1.0 - avail) * beta_model) * (1.0 - rho_model);

    let hits = (0..n_samples)
        .filter(|_| {
            let (c_ok, b_ok) = s.pair.sample(rng);
            let feasible = c_ok && b_ok;
            let recovers = rng.random::<f64>() < s.beta_true;
            let corr_failed = rng.random::<f64>() < s.rho_true;
            (feasible || recovers) && !corr_failed
        })
        .count();
    let y_hat = hits as f64 / n_samples as f64;
    let p_true_hat = s.base_p * y_hat;
    let sigma_mc = s.base_p * (y_hat * (1.0 - y_hat) / n_samples as f64).sqrt();

    let kappa = s.pair.kappa();
    let lhs = (p_model - p_true_hat).abs();
    let rhs = s.base_p * kappa
        + s.base_p * eps_rho_eff
        + s.base_p * eps_beta_eff
        + s.base_p * avail * rho_model * kappa;
    ConsistencyCheck {
        lhs,
        rhs,
        sigma_mc,
        holds: lhs <= rhs + 3.0 * sigma_mc,
    }
}

/// Weighted quadratic federated objective with controlled sampling
/// distortion: `F(w) = sum_i q_i * 0.5 * ||w - c_i||^2`, strong convexity
/// and smoothness both 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFlProblem {
    /// Per-client quadratic centers.
    pub centers: Vec<Vec<f64>>,
    /// Aggregation weights, summing to 1.
    pub weights: Vec<f64>,
    /// True per-client inclusion probabilities.
    pub p_true: Vec<f64>,
    /// Initial iterate.
    pub w0: Vec<f64>,
}

impl QuadraticFlProblem {
    /// Two clients at +/- e1 with equal weights: the minimizer is the origin
    /// and `F(w*) = 1/2`.
    pub fn two_client_default(p: f64) -> Self {
        Self {
            centers: vec![vec![1.0], vec![-1.0]],
            weights: vec![0.5, 0.5],
            p_true: vec![p, p],
            w0: vec![2.0],
        }
    }

    pub fn minimizer(&self) -> Vec<f64> {
        let dim = self.centers[0].len();
        let mut w = vec![0.0; dim];
        for (c, &q) in self.centers.iter().zip(&self.weights) {
            for (wi, ci) in w.iter_mut().zip(c) {
                *wi += q * ci;
            }
        }
        w
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(c, &q)| {
                let sq: f64 = w.iter().zip(c).map(|(wi, ci)| (wi - ci).powi(2)).sum();
                q * 0.5 * sq
            })
            .sum()
    }
}

/// Result of the convergence check for one distortion level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionFloor {
    pub delta: f64,
    /// Mean suboptimality over the final tenth of the rounds.
    pub floor: f64,
}

/// Outcome of the convergence-under-distortion check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCheck {
    pub floors: Vec<DistortionFloor>,
    /// Log-log slope of the undistorted suboptimality over the final decade.
    pub slope_delta0: f64,
    pub slope_holds: bool,
    pub floors_monotone: bool,
    /// Slope of the bounding line fitted over the distortion sweep.
    pub fitted_c2: f64,
    pub holds: bool,
}

/// Runs importance-weighted SGD with Bernoulli inclusions at the true
/// probabilities while the update weights use distorted proxies
/// `p' = p_true +/- delta` (alternating signs across clients). Verifies the
/// `O(1/t)` decay at zero distortion and that the late-round suboptimality
/// floor grows monotonically with the distortion.
pub fn check_convergence_bound(
    problem: &QuadraticFlProblem,
    delta_values: &[f64],
    rounds: usize,
    trials: usize,
    seed: u64,
) -> Result<ConvergenceCheck> {
    let p_min = problem
        .p_true
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    for &delta in delta_values {
        if p_min - delta <= 0.0 {
            return Err(Error::RejectedConfiguration(format!(
                "p_min - delta = {} - {delta} <= 0 violates the positive-probability assumption",
                p_min
            )));
        }
    }
    let gamma = 1.0f64; // eta_t = 1/(mu (t + gamma)), gamma >= max(1, L/mu) = 1
    let w_star = problem.minimizer();
    let f_star = problem.objective(&w_star);
    let n_clients = problem.centers.len();

    let mut floors = Vec::new();
    let mut slope_delta0 = f64::NAN;
    for (di, &delta) in delta_values.iter().enumerate() {
        // Distorted proxies, alternating sign so the bias does not cancel.
        let p_proxy: Vec<f64> = problem
            .p_true
            .iter()
            .enumerate()
            .map(|(i, &p)| if i % 2 == 0 { p + delta } else { p - delta })
            .map(|p| p.clamp(1e-9, 1.0))
            .collect();

        // Average suboptimality curves over trials; trial order is fixed so
        // the reduction is deterministic.
        let curves = par::map_range(trials, |trial| {
            let mut rng = stream_rng(seed, Stream::Theory, (di as u64) << 32 | trial as u64);
            let mut w = problem.w0.clone();
            let mut curve = Vec::with_capacity(rounds + 1);
            curve.push(problem.objective(&w) - f_star);
            for t in 0..rounds {
                let eta = 1.0 / (t as f64 + gamma);
                let mut g = vec![0.0; w.len()];
                for i in 0..n_clients {
                    if rng.random::<f64>() < problem.p_true[i] {
                        let scale = problem.weights[i] / p_proxy[i];
                        for (gk, (wk, ck)) in g.iter_mut().zip(w.iter().zip(&problem.centers[i]))
                        {
                            *gk += scale * (wk - ck);
                        }
                    }
                }
                for (wk, gk) in w.iter_mut().zip(&g) {
                    *wk -= eta * gk;
                }
                curve.push(problem.objective(&w) - f_star);
            }
            curve
        });
        let mut mean_curve = vec![0.0; rounds + 1];
        for curve in &curves {
            for (m, c) in mean_curve.iter_mut().zip(curve) {
                *m += c;
            }
        }
        mean_curve.iter_mut().for_each(|m| *m /= trials as f64);

        let tail_start = rounds - rounds / 10;
        let floor = mean_curve[tail_start..].iter().sum::<f64>()
            / (rounds + 1 - tail_start) as f64;
        floors.push(DistortionFloor { delta, floor });

        if delta == 0.0 {
            // Least-squares slope of log(subopt) vs log(t + gamma) over the
            // final decade of rounds.
            let lo = rounds / 10;
            let points: Vec<(f64, f64)> = (lo..=rounds)
                .filter(|&t| mean_curve[t] > 0.0)
                .map(|t| ((t as f64 + gamma).ln(), mean_curve[t].ln()))
                .collect();
            slope_delta0 = ls_slope(&points);
        }
    }

    let floors_monotone = floors.windows(2).all(|w| w[1].floor >= w[0].floor);
    let slope_holds = (slope_delta0 + 1.0).abs() <= 0.15;
    let base = floors.first().map(|f| f.floor).unwrap_or(0.0);
    let fitted_c2 = floors
        .iter()
        .filter(|f| f.delta > 0.0)
        .map(|f| (f.floor - base) / f.delta)
        .fold(0.0, f64::max);
    Ok(ConvergenceCheck {
        floors,
        slope_delta0,
        slope_holds,
        floors_monotone,
        fitted_c2,
        holds: slope_holds && floors_monotone,
    })
}

fn ls_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    num / den
}

/// One row of the verification table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub summary: String,
}

/// Names the suite accepts via the CLI.
pub const CHECK_NAMES: [&str; 5] = [
    "threshold_optimality",
    "frechet_bound",
    "hazard_recovery",
    "consistency_bound",
    "convergence_bound",
];

/// Runs the default verification suite. Deterministic per seed.
pub fn run_suite(seed: u64, checks: &[String]) -> Result<Vec<CheckOutcome>> {
    for name in checks {
        if !CHECK_NAMES.contains(&name.as_str()) {
            return Err(Error::UnknownCheck {
                name: name.clone(),
                available: CHECK_NAMES.iter().map(|s| s.to_string()).collect(),
            });
        }
    }
    let want = |name: &str| checks.is_empty() || checks.iter().any(|c| c == name);
    let mut out = Vec::new();

    if want("threshold_optimality") {
        let mut rng = stream_rng(seed, Stream::Theory, 1);
        let c = check_threshold_optimality(
            &ResourceDistribution::Normal { mean: 5.0, std: 2.0 },
            5.0,
            0.5,
            50_000,
            &mut rng,
        );
        let point = check_threshold_optimality(
            &ResourceDistribution::PointMass { at: 9.0 },
            5.0,
            0.5,
            1_000,
            &mut rng,
        );
        let passed = c.holds && c.perturbed_loss > 0.0 && point.holds && point.perturbed_loss == 0.0;
        out.push(CheckOutcome {
            name: "threshold_optimality".into(),
            passed,
            summary: format!(
                "exact_loss={} perturbed_loss={:.4} mass_between={:.4}",
                c.exact_loss, c.perturbed_loss, c.mass_between
            ),
        });
    }

    if want("frechet_bound") {
        let mut rng = stream_rng(seed, Stream::Theory, 2);
        let trials = 1000;
        let mut failures = 0usize;
        let mut worst_margin = f64::INFINITY;
        for _ in 0..trials {
            // Marginals at or above one half: there the upper Fréchet gap
            // dominates the lower one, so the single-gap bound is two-sided.
            // Below that, a countermonotone joint can deviate by more than
            // min(a_c, a_b) - a_c * a_b (see the unit tests).
            let pair = DependentBernoulliPair::new(
                rng.random_range(0.5..0.95),
                rng.random_range(0.5..0.95),
                rng.random_range(-1.0..1.0),
            );
            let c = check_frechet_bound(&pair, 20_000, &mut rng);
            if !c.holds {
                failures += 1;
            }
            worst_margin = worst_margin.min(c.bound + 3.0 * c.sigma_mc - c.empirical_delta);
        }
        out.push(CheckOutcome {
            name: "frechet_bound".into(),
            passed: failures == 0,
            summary: format!("{trials} random joints, {failures} violations, worst margin {worst_margin:.5}"),
        });
    }

    if want("hazard_recovery") {
        let mut rng = stream_rng(seed, Stream::Theory, 3);
        let c = check_hazard_recovery(1.0, 1.0, 100_000, &mut rng);
        let small = check_hazard_recovery(0.001, 0.1, 50_000, &mut rng);
        let large = check_hazard_recovery(10.0, 1.0, 50_000, &mut rng);
        let passed =
            c.holds && small.holds && large.holds && small.empirical_beta < 0.01 && large.empirical_beta > 0.99;
        out.push(CheckOutcome {
            name: "hazard_recovery".into(),
            passed,
            summary: format!(
                "beta_hat={:.5} analytic={:.5} gap={:.5} (3sigma={:.5})",
                c.empirical_beta,
                c.analytic_beta,
                c.gap,
                3.0 * c.sigma_mc
            ),
        });
    }

    if want("consistency_bound") {
        let mut rng = stream_rng(seed, Stream::Theory, 4);
        let scenarios = 50;
        let mut failures = 0usize;
        let mut worst_margin = f64::INFINITY;
        for _ in 0..scenarios {
            let scenario = ConsistencyScenario {
                pair: DependentBernoulliPair::new(
                    rng.random_range(0.2..0.95),
                    rng.random_range(0.2..0.95),
                    rng.random_range(-1.0..1.0),
                ),
                rho_true: rng.random_range(0.0..0.4),
                eps_rho: rng.random_range(-0.1..0.1),
                beta_true: rng.random_range(0.2..0.8),
                eps_beta: rng.random_range(-0.1..0.1),
                base_p: 0.8,
            };
            let c = check_consistency_bound(&scenario, 20_000, &mut rng);
            if !c.holds {
                failures += 1;
            }
            worst_margin = worst_margin.min(c.rhs + 3.0 * c.sigma_mc - c.lhs);
        }
        out.push(CheckOutcome {
            name: "consistency_bound".into(),
            passed: failures == 0,
            summary: format!("{scenarios} scenarios, {failures} violations, worst margin {worst_margin:.5}"),
        });
    }

    if want("convergence_bound") {
        let problem = QuadraticFlProblem::two_client_default(0.8);
        let c = check_convergence_bound(&problem, &[0.0, 0.05, 0.1, 0.2], 2000, 160, seed)?;
        let floors: Vec<String> = c
            .floors
            .iter()
            .map(|f| format!("delta={}: {:.6}", f.delta, f.floor))
            .collect();
        out.push(CheckOutcome {
            name: "convergence_bound".into(),
            passed: c.holds,
            summary: format!(
                "slope={:.3} (want -1 +/- 0.15), floors [{}], monotone={}, fitted C2={:.4}",
                c.slope_delta0,
                floors.join(", "),
                c.floors_monotone,
                c.fitted_c2
            ),
        });
    }

    Ok(out)
}
