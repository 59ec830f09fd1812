use crate::{SemAction, SemPoint};

pub type NodeId = usize;

/// One sampled outcome of an edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Child {
    pub node: NodeId,
    /// Model reward of the transition into `node`, unscaled.
    pub reward: f64,
    pub visits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub action: SemAction,
    pub visits: u64,
    pub q: f64,
    pub children: Vec<Child>,
    pub explored: bool,
}

impl Edge {
    pub fn new(action: SemAction) -> Self {
        Self {
            action,
            visits: 0,
            q: 0.0,
            children: Vec::new(),
            explored: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub state: SemPoint,
    pub depth: usize,
    pub visits: u64,
    pub edges: Vec<Edge>,
    pub parent: Option<(NodeId, usize)>,
}

/// Arena of state nodes; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree {
    nodes: Vec<Node>,
}

impl SearchTree {
    pub fn new(root: SemPoint, actions: Vec<SemAction>) -> Self {
        Self {
            nodes: vec![Node {
                state: root,
                depth: 0,
                visits: 0,
                edges: actions.into_iter().map(Edge::new).collect(),
                parent: None,
            }],
        }
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.nodes.get_mut(id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a node under `parent.edge` and returns its id and child slot.
    pub(crate) fn attach(
        &mut self,
        parent: NodeId,
        edge: usize,
        state: SemPoint,
        reward: f64,
    ) -> (NodeId, usize) {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(Node {
            state,
            depth,
            visits: 0,
            edges: Vec::new(),
            parent: Some((parent, edge)),
        });
        let children = &mut self.nodes[parent].edges[edge].children;
        children.push(Child {
            node: id,
            reward,
            visits: 0,
        });
        (id, children.len() - 1)
    }

    /// `N(s) == sum_a N(s, a)` at every node with edges.
    pub fn visits_conserved(&self) -> bool {
        self.nodes
            .iter()
            .filter(|n| !n.edges.is_empty())
            .all(|n| n.visits == n.edges.iter().map(|e| e.visits).sum::<u64>())
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}
