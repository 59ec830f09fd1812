//! `semplan` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semplan::baselines::{
    select_greedy0, select_greedy1, select_random, vanilla_mcts, BaselineKind, GREEDY1_SAMPLES,
};
use semplan::bench::{
    run_bench, summarize, BenchModels, CsvSink, ExperimentConfig, Method, ScopeBackend,
};
use semplan::dataio::{load_rewards, load_transitions, write_rewards, write_transitions};
use semplan::planner::{plan, plan_point, Budget, LearnedModel, PlanConfig, PlanResult};
use semplan::reward::{train_reward, RewardHyper, RewardModel};
use semplan::transition::{
    prediction_diagnostics, train_transition, Backend, TrainHyper, TransitionModel, TransitionPair,
};
use semplan::world::{
    benchmark_world, gen_reward_dataset, gen_transition_dataset, random_world, Behavior,
    ExactKernelModel, LatentWorld, RandomWorldConfig, SimLatencyProfile, SlowSim, WorldEmbedder,
};
use semplan::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "semplan",
    version,
    about = "Tree search in a semantic space with learned dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a world spec (the benchmark world or a random one).
    GenWorld(GenWorldArgs),
    /// Roll out episodes in a world and write transition (and reward) datasets.
    GenData(GenDataArgs),
    /// Train the action and next-state models of one backend.
    TrainTransition(TrainTransitionArgs),
    /// Train the reward model.
    TrainReward(TrainRewardArgs),
    /// Pick an action for one state.
    Plan(PlanArgs),
    /// Run a method x budget x depth grid and write rows plus a summary.
    Bench(BenchArgs),
    /// Cosine and norm-ratio histograms of a transition model on a dataset.
    Diag(DiagArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum WorldKind {
    Benchmark,
    Random,
}

#[derive(Args)]
struct GenWorldArgs {
    #[arg(long, value_enum, default_value = "benchmark")]
    kind: WorldKind,
    /// Random-world settings document.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embedding dimension of the benchmark world.
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    world: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    count: usize,
    /// Also write this many labeled reward points.
    #[arg(long)]
    reward_count: Option<usize>,
    #[arg(long)]
    reward_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainTransitionArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "mdn")]
    backend: String,
    /// Training hyperparameter document.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Linear reward checkpoint; enables the auxiliary reward term (mdn only).
    #[arg(long)]
    aux_reward: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes PREFIX.action.json and PREFIX.next_state.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainRewardArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct BudgetArgs {
    #[arg(long, conflicts_with = "budget_iters")]
    budget_ms: Option<u64>,
    #[arg(long)]
    budget_iters: Option<u64>,
}

impl BudgetArgs {
    fn budget(&self) -> Option<Budget> {
        self.budget_ms
            .map(Budget::WallClockMs)
            .or(self.budget_iters.map(Budget::Iterations))
    }
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    world: PathBuf,
    /// Latent state to plan from.
    #[arg(long)]
    state: usize,
    /// Candidate action ids (comma separated); all actions when absent.
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<usize>>,
    #[arg(long, default_value = "scope:exact")]
    method: String,
    /// Planner settings document.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Transition checkpoint prefix for learned scope methods.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    reward: Option<PathBuf>,
    /// Simulator latency for vanilla_mcts and greedy1.
    #[arg(long, default_value_t = 0.0)]
    latency_ms: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment document.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated method list, replacing the document's.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    starts: Option<usize>,
    /// Raw rows CSV.
    #[arg(long)]
    out: PathBuf,
    /// Summary CSV; defaults to the rows path with `.summary.csv`.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct DiagArgs {
    /// Transition checkpoint (action or next-state model).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ErrorDoc<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
}

fn read_doc<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn read_or_default<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), |p| read_doc(p))
}

fn emit(out: Option<&PathBuf>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_gen_world(a: &GenWorldArgs) -> Result<()> {
    let world = match a.kind {
        WorldKind::Benchmark => benchmark_world(a.n, a.seed)?,
        WorldKind::Random => random_world(
            &read_or_default::<RandomWorldConfig>(a.config.as_ref())?,
            a.seed,
        )?,
    };
    world.save(&a.out)
}

fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let world = LatentWorld::load(&a.world)?;
    write_transitions(
        &a.out,
        &gen_transition_dataset(&world, a.count, &Behavior::Uniform, a.seed)?,
    )?;
    match (a.reward_count, &a.reward_out) {
        (Some(n), Some(p)) => {
            write_rewards(p, &gen_reward_dataset(&world, n, a.seed.wrapping_add(1))?)
        }
        (None, None) => Ok(()),
        _ => Err(Error::Config(
            "--reward-count and --reward-out go together".into(),
        )),
    }
}

fn cmd_train_transition(a: &TrainTransitionArgs) -> Result<()> {
    let data = load_transitions(&a.data)?;
    for w in &data.warnings {
        eprintln!("warning: {w}");
    }
    let mut hyper: TrainHyper = read_or_default(a.config.as_ref())?;
    if let Some(e) = a.epochs {
        hyper.epochs = e;
    }
    let backend: Backend = a.backend.parse()?;
    let reward = a
        .aux_reward
        .as_ref()
        .map(|p| RewardModel::from_checkpoint(&semplan::dataio::Checkpoint::load(p)?))
        .transpose()?;
    let ctx = reward
        .as_ref()
        .map(|r| {
            r.head_context().ok_or_else(|| {
                Error::Config("the auxiliary term needs a linear reward model".into())
            })?
        })
        .transpose()?;
    let pair = train_transition(&data.records, backend, &hyper, a.seed, ctx.as_ref())?;
    let (pa, pn) = pair.save(&a.out)?;
    eprintln!("wrote {} and {}", pa.display(), pn.display());
    Ok(())
}

fn cmd_train_reward(a: &TrainRewardArgs) -> Result<()> {
    let data = load_rewards(&a.data)?;
    let mut hyper: RewardHyper = read_or_default(a.config.as_ref())?;
    if let Some(e) = a.epochs {
        hyper.epochs = e;
    }
    train_reward(&data.records, &hyper, a.seed)?
        .to_checkpoint()
        .save(&a.out)
}

fn load_pair(prefix: &Path) -> Result<TransitionPair> {
    let (a, n) = TransitionPair::paths(prefix);
    TransitionPair::load(&a, &n)
}

#[derive(Serialize)]
struct PlanOutput {
    method: String,
    state: usize,
    candidates: Vec<usize>,
    selected: usize,
    action: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<PlanResult>,
}

fn cmd_plan(a: &PlanArgs) -> Result<()> {
    let world = LatentWorld::load(&a.world)?;
    let candidates = a
        .candidates
        .clone()
        .unwrap_or_else(|| (0..world.num_actions(a.state)).collect());
    for &c in &candidates {
        world.kernel_row(a.state, c)?;
    }
    let mut cfg: PlanConfig = read_or_default(a.config.as_ref())?;
    if let Some(b) = a.budget.budget() {
        cfg.budget = b;
    }
    if let Some(d) = a.depth {
        cfg.depth = d;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    let method: Method = a.method.parse()?;
    let profile = SimLatencyProfile::fixed(a.latency_ms);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (selected, result) = match method {
        Method::Baseline(BaselineKind::Random) => (select_random(&candidates, &mut rng)?, None),
        Method::Baseline(BaselineKind::Greedy0) => {
            let scores = candidates
                .iter()
                .map(|&c| world.expected_immediate_reward(a.state, c))
                .collect::<Result<Vec<_>>>()?;
            (select_greedy0(&scores, |s| *s)?, None)
        }
        Method::Baseline(BaselineKind::Greedy1) => {
            let sim = SlowSim::new(profile)?;
            (
                select_greedy1(
                    &world,
                    &sim,
                    a.state,
                    &candidates,
                    GREEDY1_SAMPLES,
                    &mut rng,
                )?,
                None,
            )
        }
        Method::Baseline(BaselineKind::VanillaMcts) => {
            let r = vanilla_mcts(&world, a.state, &candidates, &cfg, profile)?;
            (r.plan.selected, Some(r.plan))
        }
        Method::Scope(ScopeBackend::Exact) => {
            let r = plan(
                &ExactKernelModel { world: &world },
                &WorldEmbedder { world: &world },
                &a.state,
                &candidates,
                &cfg,
            )?;
            (r.selected, Some(r))
        }
        Method::Scope(_) => {
            let prefix = a
                .models
                .as_ref()
                .ok_or_else(|| Error::Config("learned methods need --models".into()))?;
            let reward_path = a
                .reward
                .as_ref()
                .ok_or_else(|| Error::Config("learned methods need --reward".into()))?;
            let pair = load_pair(prefix)?;
            let reward =
                RewardModel::from_checkpoint(&semplan::dataio::Checkpoint::load(reward_path)?)?;
            let model = LearnedModel::new(&pair.action, &pair.next_state, &reward)?;
            let root = world.embedding(a.state).to_vec();
            let actions = candidates
                .iter()
                .map(|&c| world.action_vector(a.state, c))
                .collect::<Result<Vec<_>>>()?;
            let r = plan_point(&model, &root, &actions, &cfg)?;
            (r.selected, Some(r))
        }
    };
    emit(
        a.out.as_ref(),
        &PlanOutput {
            method: method.to_string(),
            state: a.state,
            action: candidates[selected],
            candidates,
            selected,
            result,
        },
    )
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = read_or_default(a.config.as_ref())?;
    if let Some(m) = &a.method {
        cfg.methods = m.clone();
    }
    if let Some(b) = a.budget.budget() {
        cfg.budgets = vec![b];
    }
    if let Some(d) = a.depth {
        cfg.depths = vec![d];
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = a.starts {
        cfg.starts = s;
    }
    cfg.validate()?;
    let world = match &cfg.world {
        Some(p) => LatentWorld::load(p)?,
        None => benchmark_world(cfg.n, cfg.world_seed)?,
    };
    let load = |a: &Option<String>, n: &Option<String>| -> Result<Option<TransitionPair>> {
        match (a, n) {
            (Some(a), Some(n)) => Ok(Some(TransitionPair::load(Path::new(a), Path::new(n))?)),
            (None, None) => Ok(None),
            _ => Err(Error::Config(
                "transition checkpoints come in action/next pairs".into(),
            )),
        }
    };
    let models = BenchModels {
        ensemble: load(&cfg.ensemble_action, &cfg.ensemble_next)?,
        mdn: load(&cfg.mdn_action, &cfg.mdn_next)?,
        reward: cfg
            .reward
            .as_ref()
            .map(|p| RewardModel::from_checkpoint(&semplan::dataio::Checkpoint::load(p)?))
            .transpose()?,
    };
    let config_json = serde_json::to_string(&cfg)?;
    let mut sink = CsvSink::create(&a.out, &config_json)?;
    let rows = run_bench(&world, &models, &cfg, &mut |row| sink.write(row))?;
    let summary_path = a
        .summary
        .clone()
        .unwrap_or_else(|| a.out.with_extension("summary.csv"));
    let mut summary = CsvSink::create(&summary_path, &config_json)?;
    for s in summarize(&rows) {
        eprintln!(
            "{:>16} {:>10} depth {:>2}  mean {:>8.4} +- {:.4}  (n={})",
            s.method, s.budget, s.depth, s.mean, s.se, s.count
        );
        summary.write(&s)?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DiagOutput {
    role: String,
    backend: String,
    summary: semplan::transition::DiagSummary,
}

fn cmd_diag(a: &DiagArgs) -> Result<()> {
    let model = TransitionModel::from_checkpoint(&semplan::dataio::Checkpoint::load(&a.model)?)?;
    let data = load_transitions(&a.data)?;
    let summary = prediction_diagnostics(&model, &data.records)?;
    emit(
        a.out.as_ref(),
        &DiagOutput {
            role: model.role.tag().to_string(),
            backend: model.backend().to_string(),
            summary,
        },
    )
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenWorld(a) => cmd_gen_world(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::TrainTransition(a) => cmd_train_transition(a),
        Command::TrainReward(a) => cmd_train_reward(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Diag(a) => cmd_diag(a),
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    let doc = ErrorDoc {
        error: ErrorBody { kind, message },
    };
    eprintln!(
        "{}",
        serde_json::to_string(&doc).unwrap_or_else(|_| "{\"error\":{}}".into())
    );
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim().to_string(), 2),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string(), 1),
    }
}
