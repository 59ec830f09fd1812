//! Comparison methods sharing the environment and candidate sets of the planner.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::numcore::argmax;
use crate::planner::{plan, PlanConfig, PlanResult};
use crate::world::{
    slow_simulate, LatentWorld, SimLatencyProfile, SlowSim, SlowSimulator, WorldEmbedder,
};
use crate::{Error, Result};

/// Default Monte Carlo samples per candidate for one-step greedy.
pub const GREEDY1_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    Greedy0,
    Greedy1,
    VanillaMcts,
}

impl BaselineKind {
    pub fn tag(self) -> &'static str {
        match self {
            BaselineKind::Random => "random",
            BaselineKind::Greedy0 => "greedy0",
            BaselineKind::Greedy1 => "greedy1",
            BaselineKind::VanillaMcts => "vanilla_mcts",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            BaselineKind::Random,
            BaselineKind::Greedy0,
            BaselineKind::Greedy1,
            BaselineKind::VanillaMcts,
        ]
        .into_iter()
        .find(|k| k.tag() == s)
        .ok_or_else(|| Error::Config(format!("unknown baseline {s:?}")))
    }
}

fn nonempty<T>(candidates: &[T]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidates to choose from".into()));
    }
    Ok(())
}

/// Uniform index.
pub fn select_random<T>(candidates: &[T], rng: &mut (impl RngCore + ?Sized)) -> Result<usize> {
    nonempty(candidates)?;
    Ok(rng.random_range(0..candidates.len()))
}

/// Argmax of a direct score, lowest index on ties. NaN scores are rejected.
pub fn select_greedy0<T>(candidates: &[T], score: impl Fn(&T) -> f64) -> Result<usize> {
    nonempty(candidates)?;
    let scores: Vec<f64> = candidates.iter().map(score).collect();
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("candidate score is NaN".into()));
    }
    Ok(argmax(&scores).expect("nonempty"))
}

/// Monte Carlo one-step reward estimate of each candidate action at `l`.
pub fn greedy1_estimates(
    world: &LatentWorld,
    sim: &SlowSim,
    l: usize,
    candidates: &[usize],
    samples: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<Vec<f64>> {
    nonempty(candidates)?;
    if samples == 0 {
        return Err(Error::InvalidInput(
            "samples_per_action must be >= 1".into(),
        ));
    }
    candidates
        .iter()
        .map(|&a| {
            let mut total = 0.0;
            for _ in 0..samples {
                total += slow_simulate(world, l, a, sim, rng)?.1;
            }
            Ok(total / samples as f64)
        })
        .collect()
}

/// Argmax of the one-step Monte Carlo estimate.
pub fn select_greedy1(
    world: &LatentWorld,
    sim: &SlowSim,
    l: usize,
    candidates: &[usize],
    samples: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<usize> {
    let est = greedy1_estimates(world, sim, l, candidates, samples, rng)?;
    Ok(argmax(&est).expect("nonempty"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanillaResult {
    pub plan: PlanResult,
    pub queries: u64,
    pub wall_secs: f64,
}

/// The planner's tree search with every simulated turn answered by the
/// latency-injected true environment.
pub fn vanilla_mcts(
    world: &LatentWorld,
    l: usize,
    candidates: &[usize],
    config: &PlanConfig,
    profile: SimLatencyProfile,
) -> Result<VanillaResult> {
    let sim = SlowSimulator::new(world, profile)?;
    let start = Instant::now();
    let result = plan(&sim, &WorldEmbedder { world }, &l, candidates, config)?;
    Ok(VanillaResult {
        plan: result,
        queries: sim.queries(),
        wall_secs: start.elapsed().as_secs_f64(),
    })
}
