//! Network structure and the staged identification schedule.
//!
//! A network is a weakly connected directed acyclic graph whose edges carry
//! dictionaries of basis functions. The central analysis here answers two
//! questions:
//!
//! * which nodes must be measured (exactly the sinks), and
//! * in what order, and from which sink derivative, each edge function can
//!   be recovered.
//!
//! The schedule rests on one structural fact: the value of an edge function
//! whose head sits `d` steps upstream of a sink first appears in the
//! `(d + 1)`-th time derivative of that sink. Edges are therefore processed
//! in increasing distance from their sink, each stage regressing one (or,
//! for parallel merges, a few) edge dictionaries against one derivative
//! order, with everything closer to the sink already known.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::dict::{BasisError, BasisFunction, EdgeFunction};

/// Node identifier as written in spec files. Ids are 1-based; use
/// [`NodeId::index`] for vector access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    /// Zero-based position of the node in state vectors.
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn from_index(index: usize) -> NodeId {
        NodeId(index + 1)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Edge identifier: position of the edge in [`NetworkSpec::edges`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub usize);

impl EdgeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A directed edge `tail -> head` carrying a dictionary and, when the
/// network is used for simulation, the true coefficients of its function.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub tail: NodeId,
    pub head: NodeId,
    pub basis: Vec<BasisFunction>,
    pub true_coeffs: Option<Vec<f64>>,
}

impl Edge {
    pub fn label(&self) -> String {
        format!("{}->{}", self.tail, self.head)
    }
}

/// Assumed function class of the edge dynamics.
///
/// Both classes contain analytic functions vanishing at the origin. The
/// `Nonlinear` class additionally requires every edge dictionary to contain
/// a non-identity entry; that extra curvature is what keeps edges merging
/// into a common node distinguishable from one another. In spec files the
/// classes are written `F_Z` and `F_ZNL`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionClass {
    Analytic,
    Nonlinear,
}

impl fmt::Display for FunctionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionClass::Analytic => write!(f, "F_Z"),
            FunctionClass::Nonlinear => write!(f, "F_ZNL"),
        }
    }
}

/// A network of scalar states coupled through edge functions.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub node_count: usize,
    pub edges: Vec<Edge>,
    pub measured: BTreeSet<NodeId>,
    pub class: FunctionClass,
}

/// Structural or semantic defect in a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("the edge set contains a directed cycle")]
    CycleDetected,
    #[error("the network is not weakly connected")]
    Disconnected,
    #[error("duplicate edge {tail}->{head}")]
    DuplicateEdge { tail: NodeId, head: NodeId },
    #[error("edge {tail}->{head} has an empty dictionary")]
    EmptyDictionary { tail: NodeId, head: NodeId },
    #[error("edge {tail}->{head}: basis {basis} does not vanish at the origin")]
    BasisNonzeroAtOrigin {
        tail: NodeId,
        head: NodeId,
        basis: String,
    },
    #[error("edge {tail}->{head}: {source}")]
    InvalidBasis {
        tail: NodeId,
        head: NodeId,
        source: BasisError,
    },
    #[error(
        "edge {tail}->{head} declares {coeff_len} coefficients for {basis_len} basis entries"
    )]
    CoefficientLength {
        tail: NodeId,
        head: NodeId,
        basis_len: usize,
        coeff_len: usize,
    },
    #[error(
        "function class F_ZNL requires a nonlinear basis entry on every edge, \
         but {tail}->{head} carries only identity monomials"
    )]
    LinearOnlyDictionary { tail: NodeId, head: NodeId },
    #[error("node {node} is out of range for a network with {node_count} nodes")]
    InvalidNode { node: NodeId, node_count: usize },
    #[error(
        "sink {sink} is not measured; every sink must be measured before \
         the edge functions can be identified"
    )]
    UnmeasuredSink { sink: NodeId },
    #[error("unsupported topology: {detail}")]
    UnsupportedTopology { detail: String },
    #[error("edge {tail}->{head} has no true coefficients")]
    MissingTrueCoefficients { tail: NodeId, head: NodeId },
}

/// A maximal family of equal-length directed paths from one node to a sink
/// that share no intermediate nodes.
///
/// The first edges of such a family all surface in the same sink derivative
/// order, so they can only be separated by regressing them jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelGroup {
    pub source: NodeId,
    pub sink: NodeId,
    /// Number of edges on each path.
    pub length: usize,
    /// Paths as node sequences `source ..= sink`, sorted lexicographically.
    pub paths: Vec<Vec<NodeId>>,
    /// First edge of each path, aligned with `paths`.
    pub first_edges: Vec<EdgeId>,
}

/// Warning that a parallel merge cannot distinguish its incoming branches.
///
/// When every edge downstream of a parallel group's first edges admits only
/// the identity monomial, a perturbation added to one branch can be exactly
/// canceled through the other, so the branch functions are not individually
/// recoverable no matter how the experiments are chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearityHazard {
    pub source: NodeId,
    pub sink: NodeId,
    /// The first edges that cannot be told apart.
    pub ambiguous_edges: Vec<EdgeId>,
    /// The linear-only downstream edges that cause the ambiguity.
    pub linear_edges: Vec<EdgeId>,
}

impl LinearityHazard {
    pub fn message(&self, spec: &NetworkSpec) -> String {
        let ambiguous: Vec<String> = self
            .ambiguous_edges
            .iter()
            .map(|e| spec.edges[e.index()].label())
            .collect();
        let linear: Vec<String> = self
            .linear_edges
            .iter()
            .map(|e| spec.edges[e.index()].label())
            .collect();
        format!(
            "edges {{{}}} are indistinguishable through sink {}: the downstream edges \
             {{{}}} admit only linear functions, so a shift added along one branch can \
             be canceled along the other",
            ambiguous.join(", "),
            self.sink,
            linear.join(", "),
        )
    }
}

/// One step of the identification schedule: recover the dictionaries of
/// `edges` from the `derivative_order`-th derivative of `sink` at the start
/// of each experiment, with the nodes in `zeroed_nodes` held at zero
/// initially.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub derivative_order: usize,
    pub edges: Vec<EdgeId>,
    pub sink: NodeId,
    pub zeroed_nodes: BTreeSet<NodeId>,
    /// Designated path (tail ..= sink) for each entry of `edges`. All edges
    /// on a path except the first are already identified when the stage
    /// runs.
    pub paths: Vec<Vec<NodeId>>,
}

impl Stage {
    /// Nodes whose initial conditions the stage requires away from zero:
    /// every path node except the sink.
    pub fn required_nonzero(&self) -> BTreeSet<NodeId> {
        self.paths
            .iter()
            .flat_map(|p| p[..p.len() - 1].iter().copied())
            .collect()
    }

    /// Dictionary size of the stage: total number of coefficients solved.
    pub fn dictionary_len(&self, spec: &NetworkSpec) -> usize {
        self.edges
            .iter()
            .map(|e| spec.edges[e.index()].basis.len())
            .sum()
    }
}

struct Adjacency {
    out: Vec<Vec<(usize, usize)>>,
    inn: Vec<Vec<(usize, usize)>>,
}

impl NetworkSpec {
    pub fn new(
        node_count: usize,
        edges: Vec<Edge>,
        measured: BTreeSet<NodeId>,
        class: FunctionClass,
    ) -> Self {
        NetworkSpec {
            node_count,
            edges,
            measured,
            class,
        }
    }

    fn adjacency(&self) -> Adjacency {
        let mut out = vec![Vec::new(); self.node_count];
        let mut inn = vec![Vec::new(); self.node_count];
        for (ei, e) in self.edges.iter().enumerate() {
            out[e.tail.index()].push((ei, e.head.index()));
            inn[e.head.index()].push((ei, e.tail.index()));
        }
        for list in out.iter_mut().chain(inn.iter_mut()) {
            list.sort_by_key(|&(_, n)| n);
        }
        Adjacency { out, inn }
    }

    /// Checks every structural invariant and returns a topological order of
    /// the nodes (ties broken by ascending id).
    pub fn validate(&self) -> Result<Vec<NodeId>, GraphError> {
        if self.node_count == 0 {
            return Err(GraphError::Disconnected);
        }
        let in_range = |n: NodeId| n.0 >= 1 && n.0 <= self.node_count;
        for &node in &self.measured {
            if !in_range(node) {
                return Err(GraphError::InvalidNode {
                    node,
                    node_count: self.node_count,
                });
            }
        }
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            for n in [e.tail, e.head] {
                if !in_range(n) {
                    return Err(GraphError::InvalidNode {
                        node: n,
                        node_count: self.node_count,
                    });
                }
            }
            if e.tail == e.head {
                return Err(GraphError::CycleDetected);
            }
            if !seen.insert((e.tail, e.head)) {
                return Err(GraphError::DuplicateEdge {
                    tail: e.tail,
                    head: e.head,
                });
            }
            if e.basis.is_empty() {
                return Err(GraphError::EmptyDictionary {
                    tail: e.tail,
                    head: e.head,
                });
            }
            for b in &e.basis {
                b.validate().map_err(|source| GraphError::InvalidBasis {
                    tail: e.tail,
                    head: e.head,
                    source,
                })?;
                if b.eval(0.0) != 0.0 {
                    return Err(GraphError::BasisNonzeroAtOrigin {
                        tail: e.tail,
                        head: e.head,
                        basis: b.to_string(),
                    });
                }
            }
            if let Some(coeffs) = &e.true_coeffs {
                if coeffs.len() != e.basis.len() {
                    return Err(GraphError::CoefficientLength {
                        tail: e.tail,
                        head: e.head,
                        basis_len: e.basis.len(),
                        coeff_len: coeffs.len(),
                    });
                }
            }
            if self.class == FunctionClass::Nonlinear && !e.basis.iter().any(|b| b.is_nonlinear())
            {
                return Err(GraphError::LinearOnlyDictionary {
                    tail: e.tail,
                    head: e.head,
                });
            }
        }
        self.check_weakly_connected()?;
        self.topological_order()
    }

    fn check_weakly_connected(&self) -> Result<(), GraphError> {
        let adj = self.adjacency();
        let mut visited = vec![false; self.node_count];
        let mut stack = vec![0usize];
        visited[0] = true;
        while let Some(v) = stack.pop() {
            for &(_, w) in adj.out[v].iter().chain(adj.inn[v].iter()) {
                if !visited[w] {
                    visited[w] = true;
                    stack.push(w);
                }
            }
        }
        if visited.iter().all(|&v| v) {
            Ok(())
        } else {
            Err(GraphError::Disconnected)
        }
    }

    fn topological_order(&self) -> Result<Vec<NodeId>, GraphError> {
        let adj = self.adjacency();
        let mut indegree: Vec<usize> = (0..self.node_count).map(|v| adj.inn[v].len()).collect();
        let mut ready: BTreeSet<usize> = (0..self.node_count).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(self.node_count);
        while let Some(&v) = ready.iter().next() {
            ready.remove(&v);
            order.push(NodeId::from_index(v));
            for &(_, w) in &adj.out[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    ready.insert(w);
                }
            }
        }
        if order.len() == self.node_count {
            Ok(order)
        } else {
            Err(GraphError::CycleDetected)
        }
    }

    /// Nodes with no outgoing edges, ascending.
    pub fn sinks(&self) -> Vec<NodeId> {
        let adj = self.adjacency();
        (0..self.node_count)
            .filter(|&v| adj.out[v].is_empty())
            .map(NodeId::from_index)
            .collect()
    }

    /// Nodes with no incoming edges, ascending.
    pub fn sources(&self) -> Vec<NodeId> {
        let adj = self.adjacency();
        (0..self.node_count)
            .filter(|&v| adj.inn[v].is_empty())
            .map(NodeId::from_index)
            .collect()
    }

    /// The nodes that must be measured for the edge functions to be
    /// recoverable: exactly the sinks. Measuring fewer loses information
    /// that no amount of experimentation can restore; measuring more is
    /// never necessary. See [`NetworkSpec::linearity_hazard`] for the one
    /// structural situation that defeats identification even with all sinks
    /// measured.
    pub fn required_measurements(&self) -> BTreeSet<NodeId> {
        self.sinks().into_iter().collect()
    }

    /// True coefficients of every edge, for simulation.
    pub fn truth_functions(&self) -> Result<Vec<EdgeFunction>, GraphError> {
        self.edges
            .iter()
            .map(|e| {
                let coeffs = e.true_coeffs.clone().ok_or(GraphError::MissingTrueCoefficients {
                    tail: e.tail,
                    head: e.head,
                })?;
                EdgeFunction::new(e.basis.clone(), coeffs).map_err(|err| {
                    GraphError::CoefficientLength {
                        tail: e.tail,
                        head: e.head,
                        basis_len: err.basis_len,
                        coeff_len: err.coeff_len,
                    }
                })
            })
            .collect()
    }

    pub fn find_edge(&self, tail: NodeId, head: NodeId) -> Option<EdgeId> {
        self.edges
            .iter()
            .position(|e| e.tail == tail && e.head == head)
            .map(EdgeId)
    }

    /// Shortest distance from every node to `sink` (`None` when the sink is
    /// unreachable).
    fn distances_to(&self, sink: usize, adj: &Adjacency) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count];
        dist[sink] = Some(0);
        let mut frontier = vec![sink];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &v in &frontier {
                let dv = dist[v].unwrap();
                for &(_, u) in &adj.inn[v] {
                    if dist[u].is_none() {
                        dist[u] = Some(dv + 1);
                        next.push(u);
                    }
                }
            }
            frontier = next;
        }
        dist
    }

    /// Bitmask per node of all path lengths from the node to `sink`
    /// (bit `l` set when some directed path of exactly `l` edges exists).
    fn path_length_masks(&self, sink: usize, adj: &Adjacency, topo: &[usize]) -> Vec<u128> {
        debug_assert!(self.node_count <= 128);
        let mut mask = vec![0u128; self.node_count];
        mask[sink] = 1;
        for &v in topo.iter().rev() {
            for &(_, w) in &adj.out[v] {
                mask[v] |= mask[w] << 1;
            }
        }
        mask
    }

    fn enumerate_paths(&self, from: usize, to: usize, adj: &Adjacency) -> Vec<Vec<usize>> {
        let mut paths = Vec::new();
        let mut current = vec![from];
        self.paths_dfs(to, adj, &mut current, &mut paths);
        paths
    }

    fn paths_dfs(
        &self,
        to: usize,
        adj: &Adjacency,
        current: &mut Vec<usize>,
        paths: &mut Vec<Vec<usize>>,
    ) {
        let v = *current.last().unwrap();
        if v == to {
            paths.push(current.clone());
            return;
        }
        for &(_, w) in &adj.out[v] {
            current.push(w);
            self.paths_dfs(to, adj, current, paths);
            current.pop();
        }
    }

    /// Enumerates all maximal families of two or more equal-length paths
    /// from a common node to a sink that share no intermediate nodes.
    /// Families are sorted by (sink, source, length).
    pub fn parallel_path_groups(&self) -> Vec<ParallelGroup> {
        let adj = self.adjacency();
        let mut groups = Vec::new();
        for sink in self.sinks() {
            let si = sink.index();
            for source in 0..self.node_count {
                if source == si {
                    continue;
                }
                let mut by_length: Vec<(usize, Vec<Vec<usize>>)> = Vec::new();
                for path in self.enumerate_paths(source, si, &adj) {
                    let len = path.len() - 1;
                    match by_length.iter_mut().find(|(l, _)| *l == len) {
                        Some((_, bucket)) => bucket.push(path),
                        None => by_length.push((len, vec![path])),
                    }
                }
                by_length.sort_by_key(|(l, _)| *l);
                for (len, mut bucket) in by_length {
                    if bucket.len() < 2 || !intermediates_disjoint(&bucket) {
                        continue;
                    }
                    bucket.sort();
                    let first_edges = bucket
                        .iter()
                        .map(|p| {
                            self.find_edge(NodeId::from_index(p[0]), NodeId::from_index(p[1]))
                                .expect("path edges exist")
                        })
                        .collect();
                    groups.push(ParallelGroup {
                        source: NodeId::from_index(source),
                        sink,
                        length: len,
                        paths: bucket
                            .into_iter()
                            .map(|p| p.into_iter().map(NodeId::from_index).collect())
                            .collect(),
                        first_edges,
                    });
                }
            }
        }
        groups
    }

    /// Parallel groups whose downstream edges are all linear, making the
    /// first edges of the group structurally indistinguishable.
    pub fn linearity_hazard(&self) -> Vec<LinearityHazard> {
        let mut hazards = Vec::new();
        for group in self.parallel_path_groups() {
            let mut linear_edges = Vec::new();
            let mut all_linear = true;
            for path in &group.paths {
                for pair in path.windows(2).skip(1) {
                    let edge = self
                        .find_edge(pair[0], pair[1])
                        .expect("path edges exist");
                    if self.edges[edge.index()].basis.iter().any(|b| b.is_nonlinear()) {
                        all_linear = false;
                    } else {
                        linear_edges.push(edge);
                    }
                }
            }
            if all_linear {
                hazards.push(LinearityHazard {
                    source: group.source,
                    sink: group.sink,
                    ambiguous_edges: group.first_edges.clone(),
                    linear_edges,
                });
            }
        }
        hazards
    }

    /// Builds the staged identification schedule.
    ///
    /// Every edge is assigned the sink that sees it at the lowest derivative
    /// order (ties to the smallest sink id) and a designated shortest path
    /// to that sink. Stages run in increasing derivative order. Within one
    /// order, a stage whose edge feeds the measurement of another stage at
    /// that same order must run first so its estimate can be subtracted;
    /// edges that force each other mutually are exactly the first edges of a
    /// parallel group and are solved jointly. Remaining ties fall back to
    /// ascending edge index.
    pub fn identification_schedule(&self) -> Result<Vec<Stage>, GraphError> {
        let topo: Vec<usize> = self.validate()?.iter().map(|n| n.index()).collect();
        let sinks = self.sinks();
        for &sink in &sinks {
            if !self.measured.contains(&sink) {
                return Err(GraphError::UnmeasuredSink { sink });
            }
        }
        let adj = self.adjacency();
        let sink_indices: Vec<usize> = sinks.iter().map(|s| s.index()).collect();
        let dists: Vec<Vec<Option<usize>>> = sink_indices
            .iter()
            .map(|&s| self.distances_to(s, &adj))
            .collect();
        let masks: Vec<Vec<u128>> = sink_indices
            .iter()
            .map(|&s| self.path_length_masks(s, &adj, &topo))
            .collect();

        let mut drafts: Vec<DraftStage> = Vec::new();
        for (ei, e) in self.edges.iter().enumerate() {
            let mut best: Option<(usize, usize)> = None;
            for (si, _) in sink_indices.iter().enumerate() {
                if let Some(d) = dists[si][e.head.index()] {
                    let order = d + 1;
                    let better = match best {
                        None => true,
                        Some((bo, bs)) => order < bo || (order == bo && sink_indices[si] < sink_indices[bs]),
                    };
                    if better {
                        best = Some((order, si));
                    }
                }
            }
            let (order, si) = best.expect("every edge reaches some sink in a DAG");
            let path = designated_path(e.tail.index(), e.head.index(), sink_indices[si], &dists[si], &adj);
            drafts.push(DraftStage {
                order,
                sink_slot: si,
                edge_ids: vec![ei],
                paths: vec![path],
            });
        }

        let groups = self.parallel_path_groups();
        let merged = self.merge_entangled(drafts, &groups, &sink_indices, &masks)?;
        let ordered = self.order_drafts(merged, &masks)?;

        Ok(ordered
            .into_iter()
            .map(|d| self.finish_stage(d, &sink_indices, &adj))
            .collect())
    }

    /// Merges same-order stages that mutually feed each other's target
    /// derivative; each merged family must correspond to a parallel group.
    fn merge_entangled(
        &self,
        drafts: Vec<DraftStage>,
        groups: &[ParallelGroup],
        sink_indices: &[usize],
        masks: &[Vec<u128>],
    ) -> Result<Vec<DraftStage>, GraphError> {
        let n = drafts.len();
        let mut reach = vec![vec![false; n]; n];
        for a in 0..n {
            for b in 0..n {
                reach[b][a] = a != b && self.contaminates(&drafts[b], &drafts[a], masks);
            }
        }
        for k in 0..n {
            for i in 0..n {
                if reach[i][k] {
                    for j in 0..n {
                        if reach[k][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
        }
        let mut assigned = vec![false; n];
        let mut merged = Vec::new();
        for i in 0..n {
            if assigned[i] {
                continue;
            }
            let class: Vec<usize> = (i..n)
                .filter(|&j| i == j || (reach[i][j] && reach[j][i]))
                .collect();
            for &j in &class {
                assigned[j] = true;
            }
            if class.len() == 1 {
                merged.push(drafts[i].clone());
                continue;
            }
            merged.push(self.merge_class(&class.iter().map(|&j| drafts[j].clone()).collect::<Vec<_>>(), groups, sink_indices)?);
        }
        Ok(merged)
    }

    fn merge_class(
        &self,
        class: &[DraftStage],
        groups: &[ParallelGroup],
        sink_indices: &[usize],
    ) -> Result<DraftStage, GraphError> {
        let order = class[0].order;
        let sink_slot = class[0].sink_slot;
        let sink = NodeId::from_index(sink_indices[sink_slot]);
        let mut edge_ids: Vec<usize> = class.iter().flat_map(|d| d.edge_ids.iter().copied()).collect();
        edge_ids.sort_unstable();
        let tails: BTreeSet<NodeId> = edge_ids.iter().map(|&e| self.edges[e].tail).collect();
        let describe = || {
            let labels: Vec<String> = edge_ids.iter().map(|&e| self.edges[e].label()).collect();
            labels.join(", ")
        };
        if tails.len() != 1 || class.iter().any(|d| d.sink_slot != sink_slot || d.order != order) {
            return Err(GraphError::UnsupportedTopology {
                detail: format!(
                    "edges {{{}}} all surface in derivative order {order} and feed each \
                     other's measurements, but do not form parallel paths from a single node",
                    describe()
                ),
            });
        }
        let source = *tails.iter().next().unwrap();
        let group = groups.iter().find(|g| {
            g.source == source
                && g.sink == sink
                && g.length == order
                && edge_ids.iter().all(|&e| g.first_edges.contains(&EdgeId(e)))
        });
        let group = group.ok_or_else(|| GraphError::UnsupportedTopology {
            detail: format!(
                "the equal-length paths from node {source} to sink {sink} share intermediate \
                 nodes, so the edges {{{}}} cannot be separated stage by stage",
                describe()
            ),
        })?;
        let paths = edge_ids
            .iter()
            .map(|&e| {
                let pos = group.first_edges.iter().position(|g| g.index() == e).unwrap();
                group.paths[pos].iter().map(|n| n.index()).collect()
            })
            .collect();
        Ok(DraftStage {
            order,
            sink_slot,
            edge_ids,
            paths,
        })
    }

    /// True when an edge of `b` (same derivative order as `a`, still
    /// unknown while `a` runs) contributes to the derivative `a` regresses
    /// against: its tail is a node `a` keeps away from zero and its head
    /// reaches `a`'s sink in exactly `order - 1` steps.
    fn contaminates(&self, b: &DraftStage, a: &DraftStage, masks: &[Vec<u128>]) -> bool {
        if a.order != b.order {
            return false;
        }
        let m = a.order;
        let required = a.required_tails();
        let mask = &masks[a.sink_slot];
        b.edge_ids.iter().any(|&ei| {
            let e = &self.edges[ei];
            required.contains(&e.tail.index())
                && m >= 1
                && (mask[e.head.index()] >> (m - 1)) & 1 == 1
        })
    }

    /// Orders drafts by derivative order, then by the feeds-first relation
    /// inside each order, then by ascending smallest edge index.
    fn order_drafts(
        &self,
        drafts: Vec<DraftStage>,
        masks: &[Vec<u128>],
    ) -> Result<Vec<DraftStage>, GraphError> {
        let mut orders: Vec<usize> = drafts.iter().map(|d| d.order).collect();
        orders.sort_unstable();
        orders.dedup();
        let mut result = Vec::with_capacity(drafts.len());
        for order in orders {
            let bucket: Vec<&DraftStage> = drafts.iter().filter(|d| d.order == order).collect();
            let n = bucket.len();
            let mut preceded_by: Vec<Vec<usize>> = vec![Vec::new(); n];
            let mut pending: Vec<usize> = vec![0; n];
            for a in 0..n {
                for b in 0..n {
                    if a != b && self.contaminates(bucket[b], bucket[a], masks) {
                        preceded_by[b].push(a);
                        pending[a] += 1;
                    }
                }
            }
            let mut ready: Vec<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
            let mut emitted = 0;
            while !ready.is_empty() {
                ready.sort_by_key(|&i| std::cmp::Reverse(bucket[i].min_edge()));
                let next = ready.pop().unwrap();
                result.push(bucket[next].clone());
                emitted += 1;
                for &after in &preceded_by[next] {
                    pending[after] -= 1;
                    if pending[after] == 0 {
                        ready.push(after);
                    }
                }
            }
            if emitted != n {
                return Err(GraphError::UnsupportedTopology {
                    detail: format!(
                        "stages at derivative order {order} feed each other cyclically"
                    ),
                });
            }
        }
        Ok(result)
    }

    fn finish_stage(&self, draft: DraftStage, sink_indices: &[usize], adj: &Adjacency) -> Stage {
        let required = draft.required_tails();
        let regressor: BTreeSet<usize> = draft.paths.iter().flatten().copied().collect();
        let mut ancestors: BTreeSet<usize> = BTreeSet::new();
        let mut stack: Vec<usize> = regressor.iter().copied().collect();
        while let Some(v) = stack.pop() {
            for &(_, u) in &adj.inn[v] {
                if ancestors.insert(u) {
                    stack.push(u);
                }
            }
        }
        let zeroed_nodes = ancestors
            .difference(&required)
            .map(|&v| NodeId::from_index(v))
            .collect();
        Stage {
            derivative_order: draft.order,
            edges: draft.edge_ids.iter().map(|&e| EdgeId(e)).collect(),
            sink: NodeId::from_index(sink_indices[draft.sink_slot]),
            zeroed_nodes,
            paths: draft
                .paths
                .iter()
                .map(|p| p.iter().map(|&v| NodeId::from_index(v)).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct DraftStage {
    order: usize,
    /// Position of the stage's sink in the sink list.
    sink_slot: usize,
    edge_ids: Vec<usize>,
    paths: Vec<Vec<usize>>,
}

impl DraftStage {
    fn required_tails(&self) -> BTreeSet<usize> {
        self.paths
            .iter()
            .flat_map(|p| p[..p.len() - 1].iter().copied())
            .collect()
    }

    fn min_edge(&self) -> usize {
        *self.edge_ids.iter().min().unwrap()
    }
}

fn intermediates_disjoint(paths: &[Vec<usize>]) -> bool {
    let mut seen = BTreeSet::new();
    for p in paths {
        for &v in &p[1..p.len() - 1] {
            if !seen.insert(v) {
                return false;
            }
        }
    }
    true
}

/// Shortest path `tail, head, ..., sink`, choosing the smallest node id at
/// every step among those that stay on a shortest route.
fn designated_path(
    tail: usize,
    head: usize,
    sink: usize,
    dist: &[Option<usize>],
    adj: &Adjacency,
) -> Vec<usize> {
    let mut path = vec![tail, head];
    let mut current = head;
    while current != sink {
        let dc = dist[current].expect("path nodes reach the sink");
        let next = adj.out[current]
            .iter()
            .map(|&(_, w)| w)
            .filter(|&w| dist[w] == Some(dc - 1))
            .min()
            .expect("shortest path continues");
        path.push(next);
        current = next;
    }
    path
}
