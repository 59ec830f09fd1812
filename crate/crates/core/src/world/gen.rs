use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{LatentWorld, WorldSpec};
use crate::dataio::{RewardRecord, TransitionRecord};
use crate::{Error, Result};

/// Turns per generated episode.
pub const EPISODE_HORIZON: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingStyle {
    /// Independent standard Gaussian points.
    #[default]
    Separated,
    /// Tight clusters of nearby states, so related latents embed close together.
    Clustered,
}

fn gauss(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Seeded state and mid-turn embeddings. Mid points sit at `E(l) + delta`
/// with `delta ~ N(0, 0.5^2 I)`.
pub(super) fn embed(
    actions: &[usize],
    n: usize,
    style: EmbeddingStyle,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = actions.len();
    let states: Vec<Vec<f64>> = match style {
        EmbeddingStyle::Separated => (0..l).map(|_| gauss(&mut rng, n, 1.0)).collect(),
        EmbeddingStyle::Clustered => {
            let k = l.div_ceil(4);
            let centers: Vec<Vec<f64>> = (0..k).map(|_| gauss(&mut rng, n, 2.0)).collect();
            (0..l)
                .map(|s| {
                    centers[s % k]
                        .iter()
                        .zip(gauss(&mut rng, n, 0.25))
                        .map(|(c, e)| c + e)
                        .collect()
                })
                .collect()
        }
    };
    let mids = states
        .iter()
        .zip(actions)
        .map(|(e, &na)| {
            (0..na)
                .map(|_| {
                    e.iter()
                        .zip(gauss(&mut rng, n, 0.5))
                        .map(|(a, d)| a + d)
                        .collect()
                })
                .collect()
        })
        .collect();
    (states, mids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomWorldConfig {
    pub states: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    /// Each kernel row puts mass on 1..=max_successors distinct states.
    pub max_successors: usize,
    pub n: usize,
    pub style: EmbeddingStyle,
}

impl Default for RandomWorldConfig {
    fn default() -> Self {
        Self {
            states: 12,
            min_actions: 2,
            max_actions: 4,
            max_successors: 3,
            n: 8,
            style: EmbeddingStyle::Separated,
        }
    }
}

/// Sparse random kernels with weights `U(0.1, 1)` normalized per row and
/// rewards `U(0, 1)`.
pub fn random_world(cfg: &RandomWorldConfig, seed: u64) -> Result<LatentWorld> {
    if cfg.min_actions == 0
        || cfg.min_actions > cfg.max_actions
        || cfg.max_successors == 0
        || cfg.states == 0
    {
        return Err(Error::Config(format!(
            "invalid random world config {cfg:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = cfg.states;
    let states: Vec<usize> = (0..l).collect();
    let actions: Vec<usize> = (0..l)
        .map(|_| rng.random_range(cfg.min_actions..=cfg.max_actions))
        .collect();
    let mut kernel = Vec::with_capacity(l);
    let mut rewards = Vec::with_capacity(l);
    for &na in &actions {
        let mut krows = Vec::with_capacity(na);
        let mut rrows = Vec::with_capacity(na);
        for _ in 0..na {
            let k = rng.random_range(1..=cfg.max_successors.min(l));
            let succ: Vec<usize> = states.choose_multiple(&mut rng, k).copied().collect();
            let w: Vec<f64> = succ.iter().map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = w.iter().sum();
            let mut row = vec![0.0; l];
            for (s, wi) in succ.iter().zip(&w) {
                row[*s] = wi / total;
            }
            krows.push(row);
            rrows.push((0..l).map(|_| rng.random::<f64>()).collect());
        }
        kernel.push(krows);
        rewards.push(rrows);
    }
    LatentWorld::from_spec(&WorldSpec {
        states: l,
        actions,
        kernel,
        rewards,
        embedding_seed: seed.wrapping_add(0x9e37_79b9),
        n: cfg.n,
        style: cfg.style,
        embedding: None,
        mid_embedding: None,
        potential: None,
    })
}

/// Roles of the twelve benchmark topics, by state index.
pub const BENCH_ROLES: [&str; 12] = [
    "hub", "hub", "hub", "hub", "bait", "bait", "trap", "trap", "climb", "climb", "summit",
    "summit",
];

const HUB: [usize; 4] = [0, 1, 2, 3];
const BAIT: [usize; 2] = [4, 5];
const TRAP: [usize; 2] = [6, 7];
const CLIMB: [usize; 2] = [8, 9];
const SUMMIT: [usize; 2] = [10, 11];

fn potential_of(l: usize) -> f64 {
    match BENCH_ROLES[l] {
        "hub" => 0.0,
        "bait" => 1.0,
        "trap" => -2.0,
        "climb" => 0.5,
        _ => 2.0,
    }
}

/// Outcome lists `(successor, probability)` per state, before shuffling.
fn bench_outcomes(l: usize) -> Vec<Vec<(usize, f64)>> {
    let p = l % 2;
    match BENCH_ROLES[l] {
        "hub" => vec![
            vec![(BAIT[p], 0.9), (l, 0.1)],
            vec![(CLIMB[p], 0.8), (l, 0.2)],
            vec![(HUB[(l + 1) % 4], 1.0)],
            vec![(HUB[(l + 3) % 4], 0.6), (TRAP[p], 0.4)],
        ],
        "bait" => vec![
            vec![(TRAP[p], 1.0)],
            vec![(TRAP[p], 0.5), (HUB[p], 0.5)],
            vec![(HUB[p + 2], 1.0)],
            vec![(CLIMB[p], 0.3), (TRAP[1 - p], 0.7)],
        ],
        "trap" => vec![
            vec![(l, 1.0)],
            vec![(l, 0.7), (HUB[p], 0.3)],
            vec![(TRAP[1 - p], 1.0)],
            vec![(l, 0.8), (CLIMB[p], 0.2)],
        ],
        "climb" => vec![
            vec![(SUMMIT[p], 0.3), (l, 0.7)],
            vec![(BAIT[p], 1.0)],
            vec![(HUB[p], 1.0)],
            vec![(CLIMB[1 - p], 1.0)],
        ],
        _ => vec![
            vec![(l, 1.0)],
            vec![(SUMMIT[1 - p], 1.0)],
            vec![(CLIMB[p], 1.0)],
            vec![(BAIT[p], 1.0)],
        ],
    }
}

/// The default twelve-topic benchmark world.
///
/// Rewards are potential differences `phi(l') - phi(l)` with
/// `phi = 0` on hubs, `1` on bait, `-2` on traps, `0.5` on climbs and `2` on
/// summits. From a hub the myopically best action leads to bait, from which
/// every continuation loses; the patient route climbs to a summit. Coordinate
/// 0 of every embedding equals `phi`, so a linear reward model is exact.
/// Action order is shuffled per state.
pub fn benchmark_world(n: usize, seed: u64) -> Result<LatentWorld> {
    if n < 2 {
        return Err(Error::Config("the benchmark world needs n >= 2".into()));
    }
    let l = BENCH_ROLES.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let potential: Vec<f64> = (0..l).map(potential_of).collect();
    let mut kernel = Vec::with_capacity(l);
    let mut rewards = Vec::with_capacity(l);
    for s in 0..l {
        let mut outcomes = bench_outcomes(s);
        outcomes.shuffle(&mut rng);
        let mut krows = Vec::new();
        let mut rrows = Vec::new();
        for out in outcomes {
            let mut row = vec![0.0; l];
            for (t, p) in out {
                row[t] += p;
            }
            krows.push(row);
            rrows.push((0..l).map(|t| potential[t] - potential[s]).collect());
        }
        kernel.push(krows);
        rewards.push(rrows);
    }
    let actions = vec![4; l];
    let embedding_seed = seed.wrapping_add(0x51ed);
    let (mut states, mut mids) = embed(&actions, n, EmbeddingStyle::Separated, embedding_seed);
    for s in 0..l {
        states[s][0] = potential[s];
        for m in &mut mids[s] {
            m[0] = potential[s];
        }
    }
    LatentWorld::from_spec(&WorldSpec {
        states: l,
        actions,
        kernel,
        rewards,
        embedding_seed,
        n,
        style: EmbeddingStyle::Separated,
        embedding: Some(states),
        mid_embedding: Some(mids),
        potential: Some(potential),
    })
}

/// Behavior policy used when rolling out episodes for datasets.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Behavior {
    #[default]
    Uniform,
    /// One fixed action per state.
    Fixed(Vec<usize>),
}

/// Records `(E(l), E_mid(l, a), E(l'))` from episodes of
/// [`EPISODE_HORIZON`] turns started at uniformly random states.
pub fn gen_transition_dataset(
    world: &LatentWorld,
    count: usize,
    behavior: &Behavior,
    seed: u64,
) -> Result<Vec<TransitionRecord>> {
    if count == 0 {
        return Err(Error::InvalidInput("count must be >= 1".into()));
    }
    if let Behavior::Fixed(p) = behavior {
        if p.len() != world.num_states() {
            return Err(Error::InvalidInput(
                "fixed policy needs one action per state".into(),
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut l = rng.random_range(0..world.num_states());
        for _ in 0..EPISODE_HORIZON {
            if out.len() == count {
                break;
            }
            let a = match behavior {
                Behavior::Uniform => rng.random_range(0..world.num_actions(l)),
                Behavior::Fixed(p) => p[l],
            };
            let (next, _) = world.step(l, a, &mut rng)?;
            out.push(TransitionRecord {
                s: world.embedding(l).to_vec(),
                s_mid: world.mid_embedding(l, a).to_vec(),
                s_next: world.embedding(next).to_vec(),
            });
            l = next;
        }
    }
    Ok(out)
}

/// Labeled points `(E(l), phi(l))` at uniformly random states. Needs a
/// world with a potential.
pub fn gen_reward_dataset(
    world: &LatentWorld,
    count: usize,
    seed: u64,
) -> Result<Vec<RewardRecord>> {
    let phi = world
        .potential()
        .ok_or_else(|| Error::Config("reward labels need a world with a potential".into()))?;
    if count == 0 {
        return Err(Error::InvalidInput("count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let l = rng.random_range(0..world.num_states());
            RewardRecord {
                s: world.embedding(l).to_vec(),
                y: phi[l],
            }
        })
        .collect())
}
