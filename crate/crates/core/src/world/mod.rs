//! Finite latent worlds with an injective embedding into `R^n`.
//!
//! A world is a small MDP: per-state action sets, a stochastic kernel
//! `P(l' | l, a)`, a reward table `r(l, a, l')`, and two embeddings. `E(l)`
//! places each latent state; `E_mid(l, a)` places the intermediate latent
//! right after the agent acts, so the action vector is `E_mid(l, a) - E(l)`.

mod gen;
mod sim;

use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

pub use gen::{
    benchmark_world, gen_reward_dataset, gen_transition_dataset, random_world, Behavior,
    EmbeddingStyle, RandomWorldConfig, BENCH_ROLES, EPISODE_HORIZON,
};
pub use sim::{
    slow_simulate, ExactKernelModel, SimLatencyProfile, SlowSim, SlowSimulator, WorldEmbedder,
};

use crate::numcore::{argmax, sub};
use crate::{Error, Result};

pub const MAX_STATES: usize = 64;
pub const MAX_ACTIONS: usize = 8;
/// Largest `|L| * |A| * horizon` the exact solver accepts.
pub const EXPECTIMAX_LIMIT: u64 = 10_000_000;
const ROW_TOL: f64 = 1e-12;

/// Serialized world document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub states: usize,
    /// Action count per state.
    pub actions: Vec<usize>,
    /// `kernel[l][a][l']`.
    pub kernel: Vec<Vec<Vec<f64>>>,
    /// `rewards[l][a][l']`.
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub embedding_seed: u64,
    pub n: usize,
    #[serde(default)]
    pub style: EmbeddingStyle,
    /// Explicit embeddings; generated from `embedding_seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mid_embedding: Option<Vec<Vec<Vec<f64>>>>,
    /// State potential with `r(l, a, l') = phi(l') - phi(l)`, when the world has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Vec<f64>>,
}

/// Result of the exact finite-horizon solver at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Expectimax {
    pub action: usize,
    pub value: f64,
    /// `Q_h(l, a)` for every action at the state.
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentWorld {
    kernel: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<Vec<f64>>>,
    embedding: Vec<Vec<f64>>,
    mid_embedding: Vec<Vec<Vec<f64>>>,
    potential: Option<Vec<f64>>,
    seed: u64,
    style: EmbeddingStyle,
}

impl LatentWorld {
    pub fn from_spec(spec: &WorldSpec) -> Result<Self> {
        let l = spec.states;
        if l == 0 || l > MAX_STATES {
            return Err(Error::Config(format!(
                "state count must be in 1..={MAX_STATES}, got {l}"
            )));
        }
        if spec.n == 0 {
            return Err(Error::Config("embedding dimension must be >= 1".into()));
        }
        if spec.actions.len() != l || spec.kernel.len() != l || spec.rewards.len() != l {
            return Err(Error::Config(
                "actions, kernel and rewards need one entry per state".into(),
            ));
        }
        for (s, &na) in spec.actions.iter().enumerate() {
            if na == 0 || na > MAX_ACTIONS {
                return Err(Error::Config(format!(
                    "state {s}: action count must be in 1..={MAX_ACTIONS}, got {na}"
                )));
            }
            if spec.kernel[s].len() != na || spec.rewards[s].len() != na {
                return Err(Error::Config(format!(
                    "state {s}: expected {na} kernel and reward rows"
                )));
            }
            for a in 0..na {
                let row = &spec.kernel[s][a];
                if row.len() != l || spec.rewards[s][a].len() != l {
                    return Err(Error::Config(format!(
                        "state {s} action {a}: rows need {l} entries"
                    )));
                }
                if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(Error::Config(format!(
                        "state {s} action {a}: negative or non-finite probability"
                    )));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > ROW_TOL {
                    return Err(Error::Config(format!(
                        "state {s} action {a}: kernel row sums to {total}"
                    )));
                }
                if spec.rewards[s][a].iter().any(|r| !r.is_finite()) {
                    return Err(Error::NonFinite("reward table"));
                }
            }
        }
        let (embedding, mid_embedding) = match (&spec.embedding, &spec.mid_embedding) {
            (Some(e), Some(m)) => (e.clone(), m.clone()),
            (None, None) => gen::embed(&spec.actions, spec.n, spec.style, spec.embedding_seed),
            _ => {
                return Err(Error::Config(
                    "embedding and mid_embedding must be given together".into(),
                ))
            }
        };
        if let Some(p) = &spec.potential {
            if p.len() != l || p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(
                    "potential needs one finite value per state".into(),
                ));
            }
        }
        let world = Self {
            kernel: spec.kernel.clone(),
            rewards: spec.rewards.clone(),
            embedding,
            mid_embedding,
            potential: spec.potential.clone(),
            seed: spec.embedding_seed,
            style: spec.style,
        };
        world.check_embedding(spec.n)?;
        Ok(world)
    }

    fn check_embedding(&self, n: usize) -> Result<()> {
        if self.embedding.len() != self.num_states()
            || self.mid_embedding.len() != self.num_states()
        {
            return Err(Error::Config("embedding needs one point per state".into()));
        }
        let mut points: Vec<&Vec<f64>> = self.embedding.iter().collect();
        for (s, mids) in self.mid_embedding.iter().enumerate() {
            if mids.len() != self.num_actions(s) {
                return Err(Error::Config(format!(
                    "state {s}: mid embedding needs one point per action"
                )));
            }
            points.extend(mids);
        }
        if points
            .iter()
            .any(|p| p.len() != n || p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Config(format!(
                "embedding points must be finite with length {n}"
            )));
        }
        for s in 0..self.num_states() {
            for t in 0..s {
                if crate::numcore::norm(&sub(&self.embedding[s], &self.embedding[t])) == 0.0 {
                    return Err(Error::Config(format!(
                        "embedding is not injective: states {t} and {s} coincide"
                    )));
                }
            }
            for a in 0..self.num_actions(s) {
                for b in 0..a {
                    if self.mid_embedding[s][a] == self.mid_embedding[s][b] {
                        return Err(Error::Config(format!(
                            "state {s}: actions {b} and {a} share a mid embedding"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_spec(&self) -> WorldSpec {
        WorldSpec {
            states: self.num_states(),
            actions: self.kernel.iter().map(Vec::len).collect(),
            kernel: self.kernel.clone(),
            rewards: self.rewards.clone(),
            embedding_seed: self.seed,
            n: self.dim(),
            style: self.style,
            embedding: Some(self.embedding.clone()),
            mid_embedding: Some(self.mid_embedding.clone()),
            potential: self.potential.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.to_spec())?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_spec(&serde_json::from_str(&text)?)
    }

    pub fn num_states(&self) -> usize {
        self.kernel.len()
    }

    pub fn num_actions(&self, l: usize) -> usize {
        self.kernel.get(l).map_or(0, Vec::len)
    }

    pub fn max_actions(&self) -> usize {
        self.kernel.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.embedding[0].len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn potential(&self) -> Option<&[f64]> {
        self.potential.as_deref()
    }

    fn check(&self, l: usize, a: usize) -> Result<()> {
        if l >= self.num_states() {
            return Err(Error::InvalidInput(format!("unknown latent state {l}")));
        }
        if a >= self.num_actions(l) {
            return Err(Error::InvalidInput(format!(
                "action {a} is not valid at state {l}"
            )));
        }
        Ok(())
    }

    pub fn kernel_row(&self, l: usize, a: usize) -> Result<&[f64]> {
        self.check(l, a)?;
        Ok(&self.kernel[l][a])
    }

    pub fn reward(&self, l: usize, a: usize, next: usize) -> Result<f64> {
        self.check(l, a)?;
        self.rewards[l][a]
            .get(next)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown latent state {next}")))
    }

    pub fn embedding(&self, l: usize) -> &[f64] {
        &self.embedding[l]
    }

    pub fn mid_embedding(&self, l: usize, a: usize) -> &[f64] {
        &self.mid_embedding[l][a]
    }

    /// `E_mid(l, a) - E(l)`.
    pub fn action_vector(&self, l: usize, a: usize) -> Result<Vec<f64>> {
        self.check(l, a)?;
        Ok(sub(&self.mid_embedding[l][a], &self.embedding[l]))
    }

    /// Samples `l' ~ P(. | l, a)` and returns it with `r(l, a, l')`.
    pub fn step(
        &self,
        l: usize,
        a: usize,
        rng: &mut (impl RngCore + ?Sized),
    ) -> Result<(usize, f64)> {
        self.check(l, a)?;
        let row = &self.kernel[l][a];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = None;
        for (j, p) in row.iter().enumerate() {
            if *p > 0.0 {
                acc += p;
                next = Some(j);
                if u < acc {
                    break;
                }
            }
        }
        let next = next.ok_or_else(|| Error::Model(format!("empty kernel row at ({l}, {a})")))?;
        Ok((next, self.rewards[l][a][next]))
    }

    /// `sum_l' P(l' | l, a) r(l, a, l')`.
    pub fn expected_immediate_reward(&self, l: usize, a: usize) -> Result<f64> {
        self.check(l, a)?;
        Ok(self.kernel[l][a]
            .iter()
            .zip(&self.rewards[l][a])
            .map(|(p, r)| p * r)
            .sum())
    }

    /// Optimal values `V_h` for every state, `h = 0..=horizon`.
    pub fn value_tables(&self, horizon: usize, gamma: f64) -> Result<Vec<Vec<f64>>> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidInput(format!(
                "gamma must lie in [0, 1], got {gamma}"
            )));
        }
        let entries = self.num_states() as u64 * self.max_actions() as u64 * horizon as u64;
        if entries > EXPECTIMAX_LIMIT {
            return Err(Error::TooLarge {
                entries,
                limit: EXPECTIMAX_LIMIT,
            });
        }
        let mut tables = vec![vec![0.0; self.num_states()]];
        for _ in 0..horizon {
            let prev = tables.last().expect("at least the zero table");
            let next = (0..self.num_states())
                .map(|l| {
                    (0..self.num_actions(l))
                        .map(|a| self.backup(l, a, gamma, prev))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            tables.push(next);
        }
        Ok(tables)
    }

    fn backup(&self, l: usize, a: usize, gamma: f64, v: &[f64]) -> f64 {
        self.kernel[l][a]
            .iter()
            .zip(&self.rewards[l][a])
            .zip(v)
            .map(|((p, r), vn)| p * (r + gamma * vn))
            .sum()
    }

    /// Exact finite-horizon dynamic program at `l`. Ties go to the lowest action index.
    pub fn expectimax(&self, l: usize, horizon: usize, gamma: f64) -> Result<Expectimax> {
        self.check(l, 0)?;
        if horizon == 0 {
            self.value_tables(0, gamma)?;
            return Ok(Expectimax {
                action: 0,
                value: 0.0,
                q: vec![0.0; self.num_actions(l)],
            });
        }
        let tables = self.value_tables(horizon - 1, gamma)?;
        let v = tables.last().expect("at least the zero table");
        let q: Vec<f64> = (0..self.num_actions(l))
            .map(|a| self.backup(l, a, gamma, v))
            .collect();
        let action = argmax(&q).expect("states have at least one action");
        Ok(Expectimax {
            action,
            value: q[action],
            q,
        })
    }

    /// Latent state whose embedding is nearest to `h`.
    pub fn decode_state(&self, h: &[f64]) -> usize {
        nearest(self.embedding.iter(), h)
    }

    /// Action at `l` whose vector `E_mid(l, a) - E(l)` is nearest to `h_a`.
    pub fn decode_action(&self, l: usize, h_a: &[f64]) -> usize {
        let target: Vec<f64> = self.embedding[l]
            .iter()
            .zip(h_a)
            .map(|(e, a)| e + a)
            .collect();
        nearest(self.mid_embedding[l].iter(), &target)
    }
}

fn nearest<'a>(points: impl Iterator<Item = &'a Vec<f64>>, h: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.enumerate() {
        let d: f64 = p.iter().zip(h).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}
