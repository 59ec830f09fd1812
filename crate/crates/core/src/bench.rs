//! Budget-sweep experiments on a latent world.
//!
//! Every `(method, budget, depth, trial, episode)` job replays the same
//! start state, candidate sets and environment randomness across methods
//! (common random numbers), so method differences are not sampling noise
//! in the environment.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    select_greedy0, select_greedy1, select_random, vanilla_mcts, BaselineKind, GREEDY1_SAMPLES,
};
use crate::planner::{plan, Budget, LearnedModel, PlanConfig, SemanticModel};
use crate::reward::RewardModel;
use crate::transition::{Backend, TransitionPair};
use crate::world::{ExactKernelModel, LatentWorld, SimLatencyProfile, SlowSim, WorldEmbedder};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScopeBackend {
    Ensemble,
    Mdn,
    /// Exact-kernel stub models; an upper reference for the learned ones.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Baseline(BaselineKind),
    Scope(ScopeBackend),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Baseline(k) => write!(f, "{k}"),
            Method::Scope(ScopeBackend::Ensemble) => f.write_str("scope:ensemble"),
            Method::Scope(ScopeBackend::Mdn) => f.write_str("scope:mdn"),
            Method::Scope(ScopeBackend::Exact) => f.write_str("scope:exact"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scope:ensemble" => Ok(Method::Scope(ScopeBackend::Ensemble)),
            "scope:mdn" | "scope" => Ok(Method::Scope(ScopeBackend::Mdn)),
            "scope:exact" => Ok(Method::Scope(ScopeBackend::Exact)),
            other => other
                .parse()
                .map(Method::Baseline)
                .map_err(|_| Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// One experiment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// World spec path; the default benchmark world when absent.
    pub world: Option<String>,
    pub world_seed: u64,
    pub n: usize,
    pub methods: Vec<String>,
    pub budgets: Vec<Budget>,
    pub depths: Vec<usize>,
    pub trials: usize,
    /// Start states per trial; drawn uniformly over the world's states.
    pub starts: usize,
    pub turns: usize,
    /// Candidate actions offered per turn.
    pub candidates: usize,
    pub seed: u64,
    pub threads: usize,
    /// Base planner settings; budget and depth come from the grids.
    pub plan: PlanConfig,
    /// Simulator latency for vanilla MCTS.
    pub latency: SimLatencyProfile,
    pub greedy1_latency: SimLatencyProfile,
    pub greedy1_samples: usize,
    pub ensemble_action: Option<String>,
    pub ensemble_next: Option<String>,
    pub mdn_action: Option<String>,
    pub mdn_next: Option<String>,
    pub reward: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: None,
            world_seed: 0,
            n: 8,
            methods: vec!["random".into(), "greedy1".into(), "scope:exact".into()],
            budgets: vec![Budget::Iterations(200)],
            depths: vec![3],
            trials: 5,
            starts: 50,
            turns: 5,
            candidates: 4,
            seed: 0,
            threads: 1,
            plan: PlanConfig::default(),
            latency: SimLatencyProfile::fixed(50.0),
            greedy1_latency: SimLatencyProfile::default(),
            greedy1_samples: GREEDY1_SAMPLES,
            ensemble_action: None,
            ensemble_next: None,
            mdn_action: None,
            mdn_next: None,
            reward: None,
        }
    }
}

impl ExperimentConfig {
    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        self.methods.iter().map(|m| m.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.budgets.is_empty() || self.depths.is_empty() {
            return Err(Error::Config(
                "methods, budgets and depths must be nonempty".into(),
            ));
        }
        if self.trials == 0
            || self.starts == 0
            || self.turns == 0
            || self.candidates == 0
            || self.threads == 0
        {
            return Err(Error::Config(
                "trials, starts, turns, candidates and threads must be >= 1".into(),
            ));
        }
        self.parsed_methods()?;
        for &depth in &self.depths {
            for &budget in &self.budgets {
                PlanConfig {
                    depth,
                    budget,
                    ..self.plan.clone()
                }
                .validate()?;
            }
        }
        self.latency.validate()?;
        self.greedy1_latency.validate()
    }
}

/// Models the learned methods need.
#[derive(Debug, Default)]
pub struct BenchModels {
    pub ensemble: Option<TransitionPair>,
    pub mdn: Option<TransitionPair>,
    pub reward: Option<RewardModel>,
}

impl BenchModels {
    fn learned(&self, backend: Backend) -> Result<LearnedModel<'_>> {
        let pair = match backend {
            Backend::Ensemble => self.ensemble.as_ref(),
            Backend::Mdn => self.mdn.as_ref(),
        };
        let pair = pair.ok_or_else(|| {
            Error::Config(format!(
                "method scope:{backend} needs transition checkpoints"
            ))
        })?;
        let reward = self
            .reward
            .as_ref()
            .ok_or_else(|| Error::Config("scope methods need a reward checkpoint".into()))?;
        LearnedModel::new(&pair.action, &pair.next_state, reward)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub budget: String,
    pub depth: usize,
    pub trial: usize,
    pub episode: usize,
    pub start: usize,
    pub cumulative_reward: f64,
    /// Mean planner rollouts per second over the episode's turns; 0 for non-planners.
    pub rollouts_per_sec: f64,
    pub sim_queries: u64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub budget: String,
    pub depth: usize,
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation over rows divided by `sqrt(count)`.
    pub se: f64,
    pub rollouts_per_sec: f64,
}

pub fn budget_label(b: Budget) -> String {
    match b {
        Budget::Iterations(k) => format!("it:{k}"),
        Budget::WallClockMs(ms) => format!("ms:{ms}"),
    }
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h = (h ^ p).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

/// Start states for each episode; identical across trials and methods.
pub fn start_states(world: &LatentWorld, cfg: &ExperimentConfig) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, &[0x5717]));
    (0..cfg.starts)
        .map(|_| rng.random_range(0..world.num_states()))
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Job {
    method: Method,
    budget: Budget,
    depth: usize,
    trial: usize,
    episode: usize,
    start: usize,
}

fn run_episode(
    world: &LatentWorld,
    models: &BenchModels,
    cfg: &ExperimentConfig,
    job: Job,
) -> Result<BenchRow> {
    let t0 = std::time::Instant::now();
    let key = [job.trial as u64, job.episode as u64];
    let mut cand_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, &[1, key[0], key[1]]));
    let mut env_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, &[2, key[0], key[1]]));
    let mut method_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, &[3, key[0], key[1]]));
    let plan_cfg = PlanConfig {
        depth: job.depth,
        budget: job.budget,
        ..cfg.plan.clone()
    };
    let greedy_sim = SlowSim::new(cfg.greedy1_latency)?;
    let embedder = WorldEmbedder { world };
    let learned = match job.method {
        Method::Scope(ScopeBackend::Ensemble) => Some(models.learned(Backend::Ensemble)?),
        Method::Scope(ScopeBackend::Mdn) => Some(models.learned(Backend::Mdn)?),
        _ => None,
    };
    let exact = ExactKernelModel { world };

    let mut l = job.start;
    let mut total = 0.0;
    let mut rps = Vec::new();
    let mut queries = 0;
    for _ in 0..cfg.turns {
        let na = world.num_actions(l);
        let cands: Vec<usize> = sample(&mut cand_rng, na, cfg.candidates.min(na)).into_vec();
        let turn_seed: u64 = method_rng.random();
        let scoped = |model: &dyn SemanticModel| {
            plan(
                model,
                &embedder,
                &l,
                &cands,
                &PlanConfig {
                    seed: turn_seed,
                    ..plan_cfg.clone()
                },
            )
        };
        let pick = match job.method {
            Method::Baseline(BaselineKind::Random) => select_random(&cands, &mut method_rng)?,
            Method::Baseline(BaselineKind::Greedy0) => {
                let scores = cands
                    .iter()
                    .map(|&a| world.expected_immediate_reward(l, a))
                    .collect::<Result<Vec<f64>>>()?;
                select_greedy0(&scores, |s| *s)?
            }
            Method::Baseline(BaselineKind::Greedy1) => select_greedy1(
                world,
                &greedy_sim,
                l,
                &cands,
                cfg.greedy1_samples,
                &mut method_rng,
            )?,
            Method::Baseline(BaselineKind::VanillaMcts) => {
                let r = vanilla_mcts(
                    world,
                    l,
                    &cands,
                    &PlanConfig {
                        seed: turn_seed,
                        ..plan_cfg.clone()
                    },
                    cfg.latency,
                )?;
                queries += r.queries;
                rps.push(r.plan.stats.rollouts_per_sec);
                r.plan.selected
            }
            Method::Scope(ScopeBackend::Exact) => {
                let r = scoped(&exact)?;
                rps.push(r.stats.rollouts_per_sec);
                r.selected
            }
            Method::Scope(_) => {
                let r = scoped(learned.as_ref().expect("learned model resolved above"))?;
                rps.push(r.stats.rollouts_per_sec);
                r.selected
            }
        };
        let (next, r) = world.step(l, cands[pick], &mut env_rng)?;
        total += r;
        l = next;
    }
    queries += greedy_sim.queries();
    Ok(BenchRow {
        method: job.method.to_string(),
        budget: budget_label(job.budget),
        depth: job.depth,
        trial: job.trial,
        episode: job.episode,
        start: job.start,
        cumulative_reward: total,
        rollouts_per_sec: if rps.is_empty() {
            0.0
        } else {
            rps.iter().sum::<f64>() / rps.len() as f64
        },
        sim_queries: queries,
        wall_secs: t0.elapsed().as_secs_f64(),
    })
}

/// Runs the whole grid, handing each finished row to `sink` in grid order.
pub fn run_bench(
    world: &LatentWorld,
    models: &BenchModels,
    cfg: &ExperimentConfig,
    sink: &mut dyn FnMut(&BenchRow) -> Result<()>,
) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let starts = start_states(world, cfg);
    let mut jobs = Vec::new();
    for method in cfg.parsed_methods()? {
        for &budget in &cfg.budgets {
            for &depth in &cfg.depths {
                for trial in 0..cfg.trials {
                    for (episode, &start) in starts.iter().enumerate() {
                        jobs.push(Job {
                            method,
                            budget,
                            depth,
                            trial,
                            episode,
                            start,
                        });
                    }
                }
            }
        }
    }
    let mut rows = Vec::with_capacity(jobs.len());
    if cfg.threads == 1 {
        for job in jobs {
            let row = run_episode(world, models, cfg, job)?;
            sink(&row)?;
            rows.push(row);
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let done: Vec<Result<BenchRow>> = pool.install(|| {
            jobs.par_iter()
                .map(|&job| run_episode(world, models, cfg, job))
                .collect()
        });
        for row in done {
            let row = row?;
            sink(&row)?;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Mean and standard error per `(method, budget, depth)`, in first-seen order.
pub fn summarize(rows: &[BenchRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<((String, String, usize), Vec<&BenchRow>)> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.budget.clone(), r.depth);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((method, budget, depth), g)| {
            let n = g.len() as f64;
            let mean = g.iter().map(|r| r.cumulative_reward).sum::<f64>() / n;
            let var = if g.len() > 1 {
                g.iter()
                    .map(|r| (r.cumulative_reward - mean).powi(2))
                    .sum::<f64>()
                    / (n - 1.0)
            } else {
                0.0
            };
            SummaryRow {
                method,
                budget,
                depth,
                count: g.len(),
                mean,
                se: (var / n).sqrt(),
                rollouts_per_sec: g.iter().map(|r| r.rollouts_per_sec).sum::<f64>() / n,
            }
        })
        .collect()
}

/// CSV writer that prefixes the file with `# config: <json>` and flushes
/// after every row, so an interrupted run keeps what it finished.
pub struct CsvSink {
    writer: csv::Writer<std::fs::File>,
}

impl CsvSink {
    pub fn create(path: impl AsRef<Path>, config_json: &str) -> Result<Self> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "# config: {config_json}")?;
        Ok(Self {
            writer: csv::Writer::from_writer(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.writer
            .serialize(row)
            .map_err(|e| Error::Model(format!("csv: {e}")))?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Reads rows written by [`CsvSink`], skipping the config comment line.
pub fn read_csv<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Model(format!("csv: {e}")))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Model(format!("csv: {e}"))))
        .collect()
}
