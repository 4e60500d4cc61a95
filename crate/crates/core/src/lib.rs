//! Trace-driven simulator and library for availability-weighted probabilistic
//! synchronous parallel (AW-PSP) client selection in federated learning.
//!
//! The crate models a population of edge devices whose availability is driven
//! by real or synthetic event traces, injects independent and correlated
//! failures, runs a round-based FL loop on a pluggable synthetic task, and
//! compares AW-PSP against a Classic-PSP baseline on accuracy and fairness
//! metrics. A numerical verification harness checks the theoretical bounds
//! behind the availability model (Fréchet factorization error, hazard-based
//! recovery, consistency decomposition, convergence under bounded sampling
//! distortion).
//!
//! Modules map one-to-one onto the subsystems:
//!
//! - [`trace`]: device-event ingestion, synthetic trace generation, and the
//!   pairwise trace-correlation matrix
//! - [`availability`]: per-node availability estimators (deadline indicator,
//!   EWMA, history windows, recovery probability)
//! - [`correlation`]: blended trace/runtime failure correlation, correlated
//!   groups, and the proximity-weighted penalty
//! - [`overlay`]: simulated DHT metadata layer with latency-ranked neighbors
//! - [`failure`]: per-round failure injection (independent and correlated)
//! - [`selection`]: Classic-PSP and AW-PSP selection policies
//! - [`task`]: the pluggable learning task (default: multinomial logistic
//!   regression on Gaussian class blobs)
//! - [`sim`]: data partitioning, wave execution, aggregation, and the round
//!   loop
//! - [`fairness`]: per-round fairness and coverage metrics
//! - [`theory`]: Monte Carlo verification of the analytical bounds
//! - [`config`]: experiment configuration and validation
//! - [`report`]: log serialization, summary tables, and run comparison
//!
//! All randomness flows through per-purpose seeded streams ([`rng`]), so any
//! run is byte-reproducible given its configuration and seeds. The hot inner
//! loops (correlation matrices, Monte Carlo trials, per-candidate scoring,
//! multi-seed sweeps) are data-parallel via rayon when the `parallel` feature
//! is enabled (default) and fall back to sequential iteration otherwise;
//! results are identical either way.

pub mod availability;
pub mod config;
pub mod correlation;
pub mod error;
pub mod failure;
pub mod fairness;
pub mod overlay;
pub mod par;
pub mod report;
pub mod rng;
pub mod selection;
pub mod sim;
pub mod task;
pub mod theory;
pub mod trace;

pub use error::{Error, Result};
