use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use rand::seq::index::sample;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::LatentWorld;
use crate::planner::{Embedder, SemanticModel};
use crate::{Error, Result, SemAction, SemPoint};

/// Injected per-query delay: `delay_ms` plus `U(0, jitter_ms)`.
///
/// The jitter draw only happens when `jitter_ms > 0`, so a fixed profile
/// consumes no randomness.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimLatencyProfile {
    pub delay_ms: f64,
    pub jitter_ms: f64,
}

impl SimLatencyProfile {
    pub fn fixed(delay_ms: f64) -> Self {
        Self {
            delay_ms,
            jitter_ms: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delay_ms >= 0.0
            && self.jitter_ms >= 0.0
            && self.delay_ms.is_finite()
            && self.jitter_ms.is_finite())
        {
            return Err(Error::Config(format!(
                "latency must be finite and >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut (impl RngCore + ?Sized)) -> Duration {
        let extra = if self.jitter_ms > 0.0 {
            rng.random_range(0.0..self.jitter_ms)
        } else {
            0.0
        };
        Duration::from_secs_f64((self.delay_ms + extra) / 1000.0)
    }
}

/// Query counter shared by everything that simulates through one profile.
#[derive(Debug, Default)]
pub struct SlowSim {
    pub profile: SimLatencyProfile,
    queries: AtomicU64,
}

impl SlowSim {
    pub fn new(profile: SimLatencyProfile) -> Result<Self> {
        profile.validate()?;
        Ok(Self {
            profile,
            queries: AtomicU64::new(0),
        })
    }

    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }
}

/// [`LatentWorld::step`] behind the profile's delay; counts the query.
pub fn slow_simulate(
    world: &LatentWorld,
    l: usize,
    a: usize,
    sim: &SlowSim,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<(usize, f64)> {
    let delay = sim.profile.draw(rng);
    if !delay.is_zero() {
        std::thread::sleep(delay);
    }
    sim.queries.fetch_add(1, Ordering::Relaxed);
    world.step(l, a, rng)
}

/// Maps latent states and action ids into the semantic space through the
/// world's embeddings: `h_a = E_mid(l, a) - E(l)`.
#[derive(Debug, Clone, Copy)]
pub struct WorldEmbedder<'w> {
    pub world: &'w LatentWorld,
}

impl Embedder for WorldEmbedder<'_> {
    type Context = usize;
    type Candidate = usize;

    fn embed(&self, l: &usize) -> Result<SemPoint> {
        if *l >= self.world.num_states() {
            return Err(Error::InvalidInput(format!("unknown latent state {l}")));
        }
        Ok(self.world.embedding(*l).to_vec())
    }

    fn embed_after(&self, l: &usize, a: &usize) -> Result<SemPoint> {
        self.world.kernel_row(*l, *a)?;
        Ok(self.world.mid_embedding(*l, *a).to_vec())
    }
}

/// Semantic model that decodes points back to latents and uses the true
/// kernel and reward table.
#[derive(Debug, Clone, Copy)]
pub struct ExactKernelModel<'w> {
    pub world: &'w LatentWorld,
}

impl ExactKernelModel<'_> {
    fn actions_at(&self, l: usize, m: usize, rng: &mut dyn RngCore) -> Result<Vec<SemAction>> {
        let na = self.world.num_actions(l);
        let ids: Vec<usize> = if m >= na {
            (0..na).collect()
        } else {
            sample(rng, na, m).into_vec()
        };
        ids.into_iter()
            .map(|a| self.world.action_vector(l, a))
            .collect()
    }

    fn decode(&self, state: &[f64], action: &[f64]) -> (usize, usize) {
        let l = self.world.decode_state(state);
        (l, self.world.decode_action(l, action))
    }
}

impl SemanticModel for ExactKernelModel<'_> {
    fn sample_action(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<SemAction> {
        let l = self.world.decode_state(state);
        let a = rng.random_range(0..self.world.num_actions(l));
        self.world.action_vector(l, a)
    }

    /// Every action when `m` covers the action set, else a random subset of `m`.
    fn propose_actions(
        &self,
        state: &[f64],
        m: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<SemAction>> {
        self.actions_at(self.world.decode_state(state), m, rng)
    }

    fn sample_next_state(
        &self,
        state: &[f64],
        action: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<SemPoint> {
        let (l, a) = self.decode(state, action);
        let (next, _) = self.world.step(l, a, rng)?;
        Ok(self.world.embedding(next).to_vec())
    }

    fn reward(&self, state: &[f64], action: &[f64], next: &[f64]) -> Result<f64> {
        let (l, a) = self.decode(state, action);
        self.world.reward(l, a, self.world.decode_state(next))
    }
}

/// The exact model with every next-state query routed through
/// [`slow_simulate`]; the stand-in for an expensive environment simulator.
#[derive(Debug)]
pub struct SlowSimulator<'w> {
    pub exact: ExactKernelModel<'w>,
    pub sim: SlowSim,
}

impl<'w> SlowSimulator<'w> {
    pub fn new(world: &'w LatentWorld, profile: SimLatencyProfile) -> Result<Self> {
        Ok(Self {
            exact: ExactKernelModel { world },
            sim: SlowSim::new(profile)?,
        })
    }

    pub fn queries(&self) -> u64 {
        self.sim.queries()
    }
}

impl SemanticModel for SlowSimulator<'_> {
    fn sample_action(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<SemAction> {
        self.exact.sample_action(state, rng)
    }

    fn propose_actions(
        &self,
        state: &[f64],
        m: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<SemAction>> {
        self.exact.propose_actions(state, m, rng)
    }

    fn sample_next_state(
        &self,
        state: &[f64],
        action: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<SemPoint> {
        let (l, a) = self.exact.decode(state, action);
        let (next, _) = slow_simulate(self.exact.world, l, a, &self.sim, rng)?;
        Ok(self.exact.world.embedding(next).to_vec())
    }

    fn reward(&self, state: &[f64], action: &[f64], next: &[f64]) -> Result<f64> {
        self.exact.reward(state, action, next)
    }
}
