//! Monte Carlo tree search over semantic points.
//!
//! The search never touches the real environment: a [`SemanticModel`]
//! proposes action vectors, samples next states and scores transitions.
//! Each iteration selects down the tree (unexplored edges first, then UCT),
//! expands one new node, rolls out to the depth bound, and backs up the
//! discounted return `G = r + gamma * G_child` along the path.

mod replay;
mod search;
mod tree;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use replay::{replay_refresh, RefreshStats, ReplayBuffer, ReplayConfig, ReplayEntry};
pub use search::{
    plan, plan_point, IterationTrace, PlanResult, PlanStats, Search, SelectKind, TraceStep,
};
pub use tree::{Child, Edge, Node, NodeId, SearchTree};

use crate::error::check_len;
use crate::numcore::{add, sub};
use crate::reward::RewardModel;
use crate::transition::{sample_action, sample_next_state, ModelRole, TransitionModel};
use crate::{Error, Result, SemAction, SemPoint};

/// Simulator and reward source for the search.
pub trait SemanticModel: Sync {
    fn sample_action(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<SemAction>;

    /// Action set attached to a freshly expanded node. May return fewer than
    /// `m` actions, never zero.
    fn propose_actions(
        &self,
        state: &[f64],
        m: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<SemAction>> {
        (0..m).map(|_| self.sample_action(state, rng)).collect()
    }

    fn sample_next_state(
        &self,
        state: &[f64],
        action: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<SemPoint>;

    fn reward(&self, state: &[f64], action: &[f64], next: &[f64]) -> Result<f64>;
}

/// Learned action model, next-state model and reward model.
#[derive(Debug, Clone, Copy)]
pub struct LearnedModel<'a> {
    pub action: &'a TransitionModel,
    pub next_state: &'a TransitionModel,
    pub reward: &'a RewardModel,
}

impl<'a> LearnedModel<'a> {
    pub fn new(
        action: &'a TransitionModel,
        next_state: &'a TransitionModel,
        reward: &'a RewardModel,
    ) -> Result<Self> {
        if action.role != ModelRole::Action || next_state.role != ModelRole::NextState {
            return Err(Error::Model(
                "expected an action model and a next-state model".into(),
            ));
        }
        let n = action.output_dim();
        check_len("next-state model output", n, next_state.output_dim())?;
        check_len("reward model input", n, reward.dim())?;
        Ok(Self {
            action,
            next_state,
            reward,
        })
    }
}

impl SemanticModel for LearnedModel<'_> {
    fn sample_action(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<SemAction> {
        sample_action(self.action, state, rng)
    }

    fn sample_next_state(
        &self,
        state: &[f64],
        action: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<SemPoint> {
        sample_next_state(self.next_state, state, action, rng)
    }

    fn reward(&self, state: &[f64], _action: &[f64], next: &[f64]) -> Result<f64> {
        self.reward.instantaneous_reward(state, next)
    }
}

/// Maps raw contexts, and contexts extended by a candidate, into the semantic space.
pub trait Embedder {
    type Context: ?Sized;
    type Candidate;

    fn embed(&self, context: &Self::Context) -> Result<SemPoint>;

    /// `f(context + candidate)`.
    fn embed_after(&self, context: &Self::Context, candidate: &Self::Candidate)
        -> Result<SemPoint>;
}

/// `f(x) = x` with concatenation acting as vector addition.
#[derive(Debug, Clone, Copy, Default)]
pub struct AdditiveEmbedder;

impl Embedder for AdditiveEmbedder {
    type Context = [f64];
    type Candidate = Vec<f64>;

    fn embed(&self, context: &[f64]) -> Result<SemPoint> {
        Ok(context.to_vec())
    }

    fn embed_after(&self, context: &[f64], candidate: &Vec<f64>) -> Result<SemPoint> {
        check_len("candidate", context.len(), candidate.len())?;
        Ok(add(context, candidate))
    }
}

/// Root point `f(context)` and one action vector `f(context + a) - f(context)` per candidate.
pub fn project_root<E: Embedder>(
    embedder: &E,
    context: &E::Context,
    candidates: &[E::Candidate],
) -> Result<(SemPoint, Vec<SemAction>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput(
            "at least one candidate is required".into(),
        ));
    }
    let root = embedder.embed(context)?;
    let actions = candidates
        .iter()
        .map(|c| {
            let after = embedder.embed_after(context, c)?;
            check_len("embedded candidate", root.len(), after.len())?;
            Ok(sub(&after, &root))
        })
        .collect::<Result<_>>()?;
    Ok((root, actions))
}

/// `q + lambda * sqrt(ln n_s / n_sa)`. Counts are real so the bonus can be
/// evaluated off the integer grid.
pub fn uct_score(q: f64, n_s: f64, n_sa: f64, lambda: f64) -> f64 {
    q + lambda * (n_s.ln() / n_sa).sqrt()
}

/// Running mean after the `n_sa`-th observation `r_hat`.
pub fn q_update(q_prev: f64, n_sa: u64, r_hat: f64) -> f64 {
    let n = n_sa as f64;
    q_prev * (1.0 - 1.0 / n) + r_hat / n
}

/// Discounted return of `depth` simulated turns from `start`, each turn
/// sampling an action, then a next state, then its reward.
pub fn rollout(
    model: &(impl SemanticModel + ?Sized),
    start: &[f64],
    depth: usize,
    gamma: f64,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let mut state = start.to_vec();
    let mut total = 0.0;
    let mut discount = 1.0;
    for d in 0..depth {
        let mut step = || -> Result<(SemPoint, f64)> {
            let a = model.sample_action(&state, rng)?;
            let next = model.sample_next_state(&state, &a, rng)?;
            let r = model.reward(&state, &a, &next)?;
            Ok((next, r))
        };
        let (next, r) = step().map_err(|e| Error::Model(format!("rollout step {d}: {e}")))?;
        total += discount * r;
        discount *= gamma;
        state = next;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Iterations(u64),
    WallClockMs(u64),
}

/// How an edge turns into child states.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ChancePolicy {
    /// One sampled child per edge, reused on every traversal.
    #[default]
    SingleChild,
    /// A new sample is drawn while the edge has fewer than
    /// `ceil(c * N(s,a)^alpha)` children; otherwise an existing child is
    /// revisited in proportion to its visits.
    ProgressiveWidening { c: f64, alpha: f64 },
    /// A fresh sample on every traversal, merged into an existing child when
    /// it lands on exactly the same point.
    Resample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub gamma: f64,
    /// Actions attached to each expanded interior node.
    pub branching: usize,
    pub depth: usize,
    pub lambda: f64,
    pub budget: Budget,
    pub reward_scale: f64,
    pub seed: u64,
    pub chance: ChancePolicy,
    pub replay: ReplayConfig,
    /// Independent root-parallel trees; 1 keeps the search deterministic.
    pub threads: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            branching: 5,
            depth: 3,
            lambda: 0.1,
            budget: Budget::Iterations(1000),
            reward_scale: 1.0,
            seed: 0,
            chance: ChancePolicy::SingleChild,
            replay: ReplayConfig::default(),
            threads: 1,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.branching == 0 || self.depth == 0 {
            return bad("branching and depth must be >= 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            ));
        }
        if matches!(self.budget, Budget::Iterations(0) | Budget::WallClockMs(0)) {
            return bad("budget must be positive".into());
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad(format!(
                "reward_scale must be finite and > 0, got {}",
                self.reward_scale
            ));
        }
        if self.threads == 0 {
            return bad("threads must be >= 1".into());
        }
        if let ChancePolicy::ProgressiveWidening { c, alpha } = self.chance {
            if !(c > 0.0 && c.is_finite() && alpha > 0.0 && alpha <= 1.0) {
                return bad(format!(
                    "progressive widening needs c > 0 and alpha in (0, 1], got c={c} alpha={alpha}"
                ));
            }
        }
        if self.replay.enabled && self.replay.refresh_every == 0 {
            return bad("replay.refresh_every must be >= 1".into());
        }
        Ok(())
    }
}
