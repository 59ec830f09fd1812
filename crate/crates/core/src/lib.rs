//! Planning in a continuous semantic space.
//!
//! Conversation-like environments are embedded into `R^n`; a learned
//! stochastic transition model and a learned reward model stand in for the
//! expensive simulator, and Monte Carlo tree search runs entirely on the
//! embedded points. A finite latent world with an injective embedding ships
//! alongside as data generator, evaluation environment and exact oracle.
//!
//! Module map:
//!
//! - [`numcore`]: dense nets with hand-written gradients, SGD, diagonal Gaussians.
//! - [`dataio`]: transition/reward datasets, normalization, splits, checkpoints.
//! - [`transition`]: ensemble and mixture-density dynamics models.
//! - [`reward`]: the state-value style reward model and per-turn reward recovery.
//! - [`planner`]: the tree search itself.
//! - [`world`]: latent ground-truth worlds, expectimax, latency-injected simulation.
//! - [`baselines`]: random, greedy and simulator-backed MCTS comparison methods.
//! - [`bench`]: experiment runner, CSV rows and summaries.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bench;
pub mod dataio;
mod error;
pub mod numcore;
pub mod planner;
pub mod reward;
pub mod transition;
pub mod world;

pub use error::{Error, Result};

/// A point in the semantic space.
pub type SemPoint = Vec<f64>;

/// An action vector: the displacement `f(s + a) - f(s)` in the semantic space.
pub type SemAction = Vec<f64>;
