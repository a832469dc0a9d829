//! Online selection among generative models.
//!
//! Each candidate generator is an arm of a multi-armed bandit. At every step
//! a policy picks one arm, draws a batch of samples from it, and updates that
//! arm's running statistics. `FD-UCB` ranks arms by an optimistic (lower)
//! bound on the Fréchet distance to a reference distribution; `IS-UCB` ranks
//! them by an optimistic (upper) bound on the Inception Score. Naive-UCB,
//! Greedy and Random serve as baselines.
//!
//! The crate is organised bottom-up:
//!
//! - [`matstats`]: symmetric matrices, Cholesky, Jacobi eigensolver, moments,
//! - [`scores`]: Fréchet distance and Inception Score,
//! - [`bonus`]: confidence bonuses and optimistic scores,
//! - [`arms`]: sample sources (Gaussian, categorical, replay),
//! - [`bandit`]: policies, the evaluation loop, regret accounting,
//! - [`config`] and [`runner`]: experiment files and their outputs.

pub mod arms;
pub mod bandit;
pub mod bonus;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod matstats;
pub mod runner;
pub mod scores;

pub use arms::{derive_seed, Arm, ArmSpec, Metric};
pub use bandit::{run_trial, Policy, PolicyKind, TrialConfig, TrialLog};
pub use bonus::{BonusMode, BonusParams};
pub use config::{load_config, ExperimentConfig};
pub use error::{Error, Result};
pub use runner::{check_bounds, compute_ref_stats, run};
pub use scores::{frechet_distance, RefStats};
