use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::replay::{replay_refresh, ReplayBuffer, ReplayEntry};
use super::tree::{NodeId, SearchTree};
use super::{
    project_root, q_update, rollout, uct_score, Budget, ChancePolicy, Embedder, PlanConfig,
    SemanticModel,
};
use crate::error::check_len;
use crate::numcore::argmax;
use crate::{Error, Result, SemAction, SemPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectKind {
    /// Picked uniformly among the node's unexplored edges.
    Unexplored,
    Uct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub node: NodeId,
    pub edge: usize,
    pub kind: SelectKind,
    /// Edge Q-values at the moment of a UCT choice.
    pub q_before: Vec<f64>,
}

/// What one iteration did.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub steps: Vec<TraceStep>,
    pub expanded: Option<NodeId>,
    /// Next-state samples drawn, expansion plus rollout.
    pub model_steps: u64,
    /// Scaled return backed up into the first edge.
    pub root_return: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub iterations: u64,
    pub model_steps: u64,
    pub elapsed_secs: f64,
    pub rollouts_per_sec: f64,
    pub max_depth: usize,
    pub tree_nodes: usize,
    pub replay_stale: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub selected: usize,
    /// Root Q-values in scaled reward units.
    pub q: Vec<f64>,
    pub visits: Vec<u64>,
    pub stats: PlanStats,
}

/// One search tree and its bookkeeping.
pub struct Search<'m, M: SemanticModel + ?Sized> {
    model: &'m M,
    config: PlanConfig,
    tree: SearchTree,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    iterations: u64,
    model_steps: u64,
    max_depth: usize,
    stale: u64,
}

impl<'m, M: SemanticModel + ?Sized> Search<'m, M> {
    pub fn new(
        model: &'m M,
        root: SemPoint,
        actions: Vec<SemAction>,
        config: PlanConfig,
    ) -> Result<Self> {
        config.validate()?;
        if actions.is_empty() {
            return Err(Error::InvalidInput(
                "at least one candidate action is required".into(),
            ));
        }
        crate::numcore::ensure_finite("root state", &root)?;
        for a in &actions {
            check_len("candidate action", root.len(), a.len())?;
            crate::numcore::ensure_finite("candidate action", a)?;
        }
        let capacity = if config.replay.enabled {
            config.replay.capacity
        } else {
            0
        };
        Ok(Self {
            model,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            tree: SearchTree::new(root, actions),
            replay: ReplayBuffer::new(capacity),
            iterations: 0,
            model_steps: 0,
            max_depth: 0,
            stale: 0,
        })
    }

    pub fn tree(&self) -> &SearchTree {
        &self.tree
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    fn select_edge(&mut self, node: NodeId) -> (usize, SelectKind, Vec<f64>) {
        let n = &self.tree.nodes()[node];
        let unexplored: Vec<usize> = (0..n.edges.len())
            .filter(|&i| !n.edges[i].explored)
            .collect();
        if !unexplored.is_empty() {
            let pick = unexplored[self.rng.random_range(0..unexplored.len())];
            return (pick, SelectKind::Unexplored, Vec::new());
        }
        let scores: Vec<f64> = n
            .edges
            .iter()
            .map(|e| uct_score(e.q, n.visits as f64, e.visits as f64, self.config.lambda))
            .collect();
        let q = n.edges.iter().map(|e| e.q).collect();
        (
            argmax(&scores).expect("nodes on a path have edges"),
            SelectKind::Uct,
            q,
        )
    }

    /// Child slot to descend into, sampling a new outcome when the chance
    /// policy asks for one. Returns `(slot, newly created)`.
    fn chance(
        &mut self,
        node: NodeId,
        edge: usize,
        trace: &mut IterationTrace,
    ) -> Result<(usize, bool)> {
        let (n_sa, n_children) = {
            let e = &self.tree.nodes()[node].edges[edge];
            (e.visits, e.children.len())
        };
        let sample_new = match self.config.chance {
            ChancePolicy::SingleChild => n_children == 0,
            ChancePolicy::Resample => true,
            ChancePolicy::ProgressiveWidening { c, alpha } => {
                (n_children as f64) < (c * ((n_sa + 1) as f64).powf(alpha)).ceil()
            }
        };
        if !sample_new {
            if n_children == 1 {
                return Ok((0, false));
            }
            let e = &self.tree.nodes()[node].edges[edge];
            let total: u64 = e.children.iter().map(|c| c.visits.max(1)).sum();
            let mut pick = self.rng.random_range(0..total);
            for (i, c) in e.children.iter().enumerate() {
                let w = c.visits.max(1);
                if pick < w {
                    return Ok((i, false));
                }
                pick -= w;
            }
            return Ok((n_children - 1, false));
        }
        let (state, action) = {
            let n = &self.tree.nodes()[node];
            (n.state.clone(), n.edges[edge].action.clone())
        };
        let next = self
            .model
            .sample_next_state(&state, &action, &mut self.rng)?;
        trace.model_steps += 1;
        check_len("sampled next state", state.len(), next.len())?;
        crate::numcore::ensure_finite("sampled next state", &next)?;
        let existing = self.tree.nodes()[node].edges[edge]
            .children
            .iter()
            .position(|c| self.tree.nodes()[c.node].state == next);
        if let Some(slot) = existing {
            return Ok((slot, false));
        }
        let reward = self.model.reward(&state, &action, &next)?;
        if !reward.is_finite() {
            return Err(Error::NonFinite("model reward"));
        }
        let (child, slot) = self.tree.attach(node, edge, next, reward);
        let depth = self.tree.nodes()[child].depth;
        if depth < self.config.depth {
            let st = self.tree.nodes()[child].state.clone();
            let actions = self
                .model
                .propose_actions(&st, self.config.branching, &mut self.rng)?;
            if actions.is_empty() {
                return Err(Error::Model("model proposed no actions".into()));
            }
            for a in &actions {
                check_len("proposed action", st.len(), a.len())?;
                crate::numcore::ensure_finite("proposed action", a)?;
            }
            let node = self.tree.node_mut(child).expect("just attached");
            node.edges = actions.into_iter().map(super::Edge::new).collect();
        }
        Ok((slot, true))
    }

    /// Select, expand, roll out and back up once.
    pub fn iterate(&mut self) -> Result<IterationTrace> {
        let mut trace = IterationTrace {
            steps: Vec::new(),
            expanded: None,
            model_steps: 0,
            root_return: 0.0,
        };
        let mut path: Vec<(NodeId, usize, usize)> = Vec::new();
        let mut node = 0;
        let mut leaf_value = 0.0;
        loop {
            let n = &self.tree.nodes()[node];
            if n.depth >= self.config.depth || n.edges.is_empty() {
                break;
            }
            let (edge, kind, q_before) = self.select_edge(node);
            trace.steps.push(TraceStep {
                node,
                edge,
                kind,
                q_before,
            });
            let (slot, created) = self.chance(node, edge, &mut trace)?;
            path.push((node, edge, slot));
            let child = self.tree.nodes()[node].edges[edge].children[slot].node;
            if created {
                trace.expanded = Some(child);
                let n = &self.tree.nodes()[child];
                let remaining = self.config.depth - n.depth;
                let start = n.state.clone();
                leaf_value = self.config.reward_scale
                    * rollout(
                        self.model,
                        &start,
                        remaining,
                        self.config.gamma,
                        &mut self.rng,
                    )?;
                trace.model_steps += remaining as u64;
                self.max_depth = self.max_depth.max(self.config.depth);
                break;
            }
            node = child;
            self.max_depth = self.max_depth.max(self.tree.nodes()[node].depth);
        }
        let mut g = leaf_value;
        for &(node, edge, slot) in path.iter().rev() {
            let n = self.tree.node_mut(node).expect("path nodes exist");
            n.visits += 1;
            let e = &mut n.edges[edge];
            g = self.config.reward_scale * e.children[slot].reward + self.config.gamma * g;
            e.children[slot].visits += 1;
            e.explored = true;
            e.visits += 1;
            e.q = q_update(e.q, e.visits, g);
            self.replay.push(ReplayEntry { node, edge, ret: g });
        }
        trace.root_return = g;
        self.iterations += 1;
        self.model_steps += trace.model_steps;
        if self.config.replay.enabled
            && self
                .iterations
                .is_multiple_of(self.config.replay.refresh_every)
        {
            self.stale += replay_refresh(&mut self.tree, &self.replay).stale as u64;
        }
        Ok(trace)
    }

    /// Iterates until the budget is spent. Wall-clock budgets are checked
    /// between iterations only.
    pub fn run(&mut self) -> Result<PlanResult> {
        let start = Instant::now();
        match self.config.budget {
            Budget::Iterations(k) => {
                for _ in 0..k {
                    self.iterate()?;
                }
            }
            Budget::WallClockMs(ms) => {
                let deadline = start + Duration::from_millis(ms);
                while Instant::now() < deadline {
                    self.iterate()?;
                }
            }
        }
        Ok(self.result(start.elapsed().as_secs_f64()))
    }

    pub fn result(&self, elapsed_secs: f64) -> PlanResult {
        let root = self.tree.root();
        let q: Vec<f64> = root.edges.iter().map(|e| e.q).collect();
        PlanResult {
            selected: argmax(&q).unwrap_or(0),
            visits: root.edges.iter().map(|e| e.visits).collect(),
            q,
            stats: PlanStats {
                iterations: self.iterations,
                model_steps: self.model_steps,
                elapsed_secs,
                rollouts_per_sec: if elapsed_secs > 0.0 {
                    self.iterations as f64 / elapsed_secs
                } else {
                    0.0
                },
                max_depth: self.max_depth,
                tree_nodes: self.tree.len(),
                replay_stale: self.stale,
            },
        }
    }
}

fn merge(results: Vec<PlanResult>) -> PlanResult {
    let m = results[0].q.len();
    let mut q = vec![0.0; m];
    let mut visits = vec![0u64; m];
    let mut stats = PlanStats::default();
    for r in &results {
        for a in 0..m {
            q[a] += r.visits[a] as f64 * r.q[a];
            visits[a] += r.visits[a];
        }
        stats.iterations += r.stats.iterations;
        stats.model_steps += r.stats.model_steps;
        stats.elapsed_secs = stats.elapsed_secs.max(r.stats.elapsed_secs);
        stats.max_depth = stats.max_depth.max(r.stats.max_depth);
        stats.tree_nodes += r.stats.tree_nodes;
        stats.replay_stale += r.stats.replay_stale;
    }
    for a in 0..m {
        if visits[a] > 0 {
            q[a] /= visits[a] as f64;
        }
    }
    if stats.elapsed_secs > 0.0 {
        stats.rollouts_per_sec = stats.iterations as f64 / stats.elapsed_secs;
    }
    PlanResult {
        selected: argmax(&q).unwrap_or(0),
        q,
        visits,
        stats,
    }
}

/// Plans from an already embedded root. With `threads > 1`, independent
/// trees seeded `seed + i` run in parallel and their root Q-values are
/// merged by visit-weighted average.
pub fn plan_point<M: SemanticModel + ?Sized>(
    model: &M,
    root: &[f64],
    actions: &[SemAction],
    config: &PlanConfig,
) -> Result<PlanResult> {
    config.validate()?;
    if config.threads == 1 {
        return Search::new(model, root.to_vec(), actions.to_vec(), config.clone())?.run();
    }
    let results: Vec<Result<PlanResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.threads)
            .map(|i| {
                let mut cfg = config.clone();
                cfg.seed = config.seed.wrapping_add(i as u64);
                cfg.threads = 1;
                scope.spawn(move || Search::new(model, root.to_vec(), actions.to_vec(), cfg)?.run())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Model("planner worker panicked".into())))
            })
            .collect()
    });
    Ok(merge(results.into_iter().collect::<Result<_>>()?))
}

/// Projects the context and candidates, then plans.
pub fn plan<M, E>(
    model: &M,
    embedder: &E,
    context: &E::Context,
    candidates: &[E::Candidate],
    config: &PlanConfig,
) -> Result<PlanResult>
where
    M: SemanticModel + ?Sized,
    E: Embedder,
{
    let (root, actions) = project_root(embedder, context, candidates)?;
    plan_point(model, &root, &actions, config)
}
