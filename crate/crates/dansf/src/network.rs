//! Graph topologies, per-iteration tree pruning, gather schedules, and
//! per-link communication accounting.
//!
//! Node ids are 1-based throughout. Every iteration of the fusion engine
//! prunes the connectivity graph to a breadth-first shortest-path tree rooted
//! at the updating node; ties between equal-distance parents are broken
//! toward the lowest parent index so runs are reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DansfError, Result};
use crate::seeds;

/// Requested topology family for [`generate_topology`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyKind {
    FullyConnected,
    Line,
    ErdosRenyi { p: f64 },
}

impl TopologyKind {
    pub fn label(&self) -> &'static str {
        match self {
            TopologyKind::FullyConnected => "fully_connected",
            TopologyKind::Line => "line",
            TopologyKind::ErdosRenyi { .. } => "erdos_renyi",
        }
    }
}

/// Undirected connected graph over nodes `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    num_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl NetworkGraph {
    /// Build a graph from an explicit edge list, validating the invariants:
    /// ids in range, no self-loops, connected.
    pub fn new(num_nodes: usize, edge_list: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if num_nodes < 1 {
            return Err(DansfError::InvalidConfig("graph needs at least one node".into()));
        }
        let mut edges = BTreeSet::new();
        for (a, b) in edge_list {
            if a == b {
                return Err(DansfError::InvalidGraph(format!("self-loop at node {a}")));
            }
            for n in [a, b] {
                if n < 1 || n > num_nodes {
                    return Err(DansfError::NodeOutOfRange { node: n, num_nodes });
                }
            }
            edges.insert((a.min(b), a.max(b)));
        }
        let graph = Self { num_nodes, edges };
        if !graph.is_connected() {
            return Err(DansfError::InvalidGraph("graph is not connected".into()));
        }
        Ok(graph)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Normalized (low, high) edge pairs in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Neighbor ids of `k`, ascending.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == k {
                    Some(b)
                } else if b == k {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    fn is_connected(&self) -> bool {
        if self.num_nodes == 1 {
            return true;
        }
        let mut seen = vec![false; self.num_nodes + 1];
        let mut stack = vec![1usize];
        seen[1] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.num_nodes
    }

    /// Edge-list text format: first line `K`, then one `k l` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.num_nodes);
        for (a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    /// Parse the edge-list text format, reporting the offending line on error.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(DansfError::Parse {
            line: 1,
            message: "missing node-count header".into(),
        })?;
        let num_nodes: usize = first.trim().parse().map_err(|_| DansfError::Parse {
            line: 1,
            message: format!("expected node count, got `{}`", first.trim()),
        })?;
        let mut edges = Vec::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse_id = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse().ok()).ok_or(DansfError::Parse {
                    line: idx + 1,
                    message: format!("expected `k l` pair, got `{line}`"),
                })
            };
            let a = parse_id(parts.next())?;
            let b = parse_id(parts.next())?;
            if parts.next().is_some() {
                return Err(DansfError::Parse {
                    line: idx + 1,
                    message: format!("trailing tokens in `{line}`"),
                });
            }
            edges.push((a, b));
        }
        Self::new(num_nodes, edges)
    }
}

/// Maximum Erdős–Rényi resampling attempts before giving up.
const ER_RETRY_BUDGET: usize = 1000;

/// Generate a connected topology of the requested kind. Deterministic for a
/// fixed `(kind, num_nodes, seed)`; the Erdős–Rényi generator resamples from
/// seed-derived streams until the draw is connected.
pub fn generate_topology(kind: TopologyKind, num_nodes: usize, seed: u64) -> Result<NetworkGraph> {
    if num_nodes < 2 {
        return Err(DansfError::InvalidConfig(format!(
            "topology generation needs at least 2 nodes, got {num_nodes}"
        )));
    }
    match kind {
        TopologyKind::FullyConnected => {
            let edges = (1..=num_nodes)
                .flat_map(|a| ((a + 1)..=num_nodes).map(move |b| (a, b)));
            NetworkGraph::new(num_nodes, edges)
        }
        TopologyKind::Line => {
            NetworkGraph::new(num_nodes, (1..num_nodes).map(|a| (a, a + 1)))
        }
        TopologyKind::ErdosRenyi { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(DansfError::InvalidConfig(format!(
                    "Erdős–Rényi edge probability must be in (0, 1], got {p}"
                )));
            }
            for attempt in 0..ER_RETRY_BUDGET {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seeds::derive(seed, 0x4752_4150, attempt as u64));
                let mut edges = Vec::new();
                for a in 1..=num_nodes {
                    for b in (a + 1)..=num_nodes {
                        if rng.gen::<f64>() < p {
                            edges.push((a, b));
                        }
                    }
                }
                if let Ok(graph) = NetworkGraph::new(num_nodes, edges) {
                    return Ok(graph);
                }
            }
            Err(DansfError::GenerationFailure {
                attempts: ER_RETRY_BUDGET,
            })
        }
    }
}

/// Spanning tree of the graph rooted at the updating node, with the branch
/// partition of the non-root nodes.
#[derive(Debug, Clone)]
pub struct TreeTopology {
    root: usize,
    num_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
    parent: Vec<usize>,
    depth: Vec<usize>,
    branch_of: Vec<usize>,
}

impl TreeTopology {
    pub fn root(&self) -> usize {
        self.root
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn contains_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Tree parent toward the root; the root has no parent.
    pub fn parent(&self, k: usize) -> Option<usize> {
        if k == self.root {
            None
        } else {
            Some(self.parent[k])
        }
    }

    pub fn depth(&self, k: usize) -> usize {
        self.depth[k]
    }

    /// Tree neighbors of `k`, ascending.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for &(a, b) in &self.edges {
            if a == k {
                out.push(b);
            } else if b == k {
                out.push(a);
            }
        }
        out.sort_unstable();
        out
    }

    /// Root neighbors in ascending order; this fixes the band order of the
    /// gathered data at the updating node.
    pub fn root_neighbors(&self) -> Vec<usize> {
        self.neighbors(self.root)
    }

    /// The root neighbor whose branch contains `k` (`k ≠ root`).
    pub fn branch_of(&self, k: usize) -> Result<usize> {
        if k == self.root || k < 1 || k > self.num_nodes {
            return Err(DansfError::NodeOutOfRange {
                node: k,
                num_nodes: self.num_nodes,
            });
        }
        Ok(self.branch_of[k])
    }

    /// Members of the branch hanging off root neighbor `n`, ascending.
    pub fn branch_members(&self, n: usize) -> Vec<usize> {
        (1..=self.num_nodes)
            .filter(|&k| k != self.root && self.branch_of[k] == n)
            .collect()
    }
}

/// Prune a connected graph to the breadth-first shortest-path tree rooted at
/// `q`. Every graph edge incident to `q` is kept (all neighbors of the root
/// attach at depth 1), and equal-distance parent candidates are resolved to
/// the lowest index.
pub fn prune_to_tree(graph: &NetworkGraph, q: usize) -> Result<TreeTopology> {
    let num_nodes = graph.num_nodes();
    if q < 1 || q > num_nodes {
        return Err(DansfError::NodeOutOfRange {
            node: q,
            num_nodes,
        });
    }

    // Breadth-first distances from the root.
    let mut dist = vec![usize::MAX; num_nodes + 1];
    dist[q] = 0;
    let mut frontier = vec![q];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &u in &frontier {
            for v in graph.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    if dist[1..=num_nodes].iter().any(|&d| d == usize::MAX) {
        return Err(DansfError::InvalidGraph("graph is not connected".into()));
    }

    let mut parent = vec![0usize; num_nodes + 1];
    let mut edges = BTreeSet::new();
    for v in 1..=num_nodes {
        if v == q {
            continue;
        }
        let p = graph
            .neighbors(v)
            .into_iter()
            .filter(|&u| dist[u] + 1 == dist[v])
            .min()
            .expect("bfs distance implies a parent");
        parent[v] = p;
        edges.insert((v.min(p), v.max(p)));
    }

    // Branch = the root neighbor on the path toward q.
    let mut branch_of = vec![0usize; num_nodes + 1];
    for v in 1..=num_nodes {
        if v == q {
            continue;
        }
        let mut u = v;
        while parent[u] != q {
            u = parent[u];
        }
        branch_of[v] = u;
    }

    Ok(TreeTopology {
        root: q,
        num_nodes,
        edges,
        parent,
        depth: dist,
        branch_of,
    })
}

/// Leaf-to-root transmission order: `(sender, receiver)` directed tree edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatherSchedule {
    steps: Vec<(usize, usize)>,
}

impl GatherSchedule {
    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Build the sum-and-forward schedule for a tree: every non-root node sends
/// to its parent exactly once, after all of its children have sent. Among the
/// nodes ready to send, the lowest index goes first.
pub fn gather_schedule(tree: &TreeTopology) -> GatherSchedule {
    let n = tree.num_nodes();
    let mut pending_children = vec![0usize; n + 1];
    for k in 1..=n {
        if let Some(p) = tree.parent(k) {
            pending_children[p] += 1;
        }
    }
    let mut ready: BTreeSet<usize> = (1..=n)
        .filter(|&k| k != tree.root() && pending_children[k] == 0)
        .collect();
    let mut steps = Vec::with_capacity(n.saturating_sub(1));
    while let Some(&k) = ready.iter().next() {
        ready.remove(&k);
        let p = tree.parent(k).expect("non-root node has a parent");
        steps.push((k, p));
        if p != tree.root() {
            pending_children[p] -= 1;
            if pending_children[p] == 0 {
                ready.insert(p);
            }
        }
    }
    GatherSchedule { steps }
}

/// Per directed-edge running totals of transmitted scalars and messages.
#[derive(Debug, Clone, Default)]
pub struct LinkCostLedger {
    tallies: BTreeMap<(usize, usize), LinkTally>,
}

/// Counters for one directed link.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkTally {
    pub scalars_sent: u64,
    pub messages_sent: u64,
}

impl LinkCostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one transfer of `scalars` values over the directed edge
    /// `(from, to)`, which must be an edge of the current tree. Zero-scalar
    /// transfers leave the counters unchanged.
    pub fn record_transfer(
        &mut self,
        tree: &TreeTopology,
        from: usize,
        to: usize,
        scalars: u64,
    ) -> Result<()> {
        if !tree.contains_edge(from, to) {
            return Err(DansfError::AccountingError { from, to });
        }
        if scalars == 0 {
            return Ok(());
        }
        let t = self.tallies.entry((from, to)).or_default();
        t.scalars_sent += scalars;
        t.messages_sent += 1;
        Ok(())
    }

    pub fn link(&self, from: usize, to: usize) -> LinkTally {
        self.tallies.get(&(from, to)).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), LinkTally)> + '_ {
        self.tallies.iter().map(|(&e, &t)| (e, t))
    }

    pub fn total_scalars(&self) -> u64 {
        self.tallies.values().map(|t| t.scalars_sent).sum()
    }

    pub fn total_messages(&self) -> u64 {
        self.tallies.values().map(|t| t.messages_sent).sum()
    }
}
