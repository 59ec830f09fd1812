use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::tree::{NodeId, SearchTree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub enabled: bool,
    pub capacity: usize,
    /// Iterations between refreshes.
    pub refresh_every: u64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            capacity: 100_000,
            refresh_every: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayEntry {
    pub node: NodeId,
    pub edge: usize,
    pub ret: f64,
}

/// FIFO buffer of observed edge returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    entries: VecDeque<ReplayEntry>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
        }
    }

    pub fn push(&mut self, entry: ReplayEntry) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &ReplayEntry> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RefreshStats {
    pub edges_updated: usize,
    pub stale: usize,
}

/// Sets each buffered edge's Q to the mean of its buffered returns.
/// Entries pointing at missing nodes or edges are skipped and counted.
pub fn replay_refresh(tree: &mut SearchTree, buffer: &ReplayBuffer) -> RefreshStats {
    let mut sums: HashMap<(NodeId, usize), (f64, u64)> = HashMap::new();
    let mut stats = RefreshStats::default();
    for e in buffer.entries() {
        let live = tree.node(e.node).is_some_and(|n| e.edge < n.edges.len());
        if !live {
            stats.stale += 1;
            continue;
        }
        let s = sums.entry((e.node, e.edge)).or_insert((0.0, 0));
        s.0 += e.ret;
        s.1 += 1;
    }
    let mut keys: Vec<_> = sums.into_iter().collect();
    keys.sort_by_key(|(k, _)| *k);
    for ((node, edge), (sum, count)) in keys {
        if let Some(n) = tree.node_mut(node) {
            n.edges[edge].q = sum / count as f64;
            stats.edges_updated += 1;
        }
    }
    stats
}
