//! Multi-armed bandits with switching costs.
//!
//! - [`ftrl`]: the Tsallis-entropy FTRL distribution and the importance-weighted estimator.
//! - [`policies`]: Tsallis-INF, mini-batched Tsallis-INF, the two-phase switch-budget
//!   controller, and two baselines.
//! - [`environments`]: Bernoulli, drifting stochastically-constrained, fixed, and the
//!   multi-scale Gaussian-walk adversary (plain and conditioned on staying unclipped).
//! - [`ledger`]: regret and switch accounting.
//! - [`harness`]: seeded episodes, sweeps, slope fits.
//! - [`cli`]: configuration parsing and CSV / JSON output.

pub mod cli;
pub mod environments;
pub mod ftrl;
pub mod harness;
pub mod ledger;
pub mod policies;

pub use ledger::{EpisodeTrace, ExperimentParams, GapSpec, LossVector, Phase, RegretLedger};
