//! Fixed-width tree decomposition index.
//!
//! Nodes of undirected degree at most `w` are peeled off one at a time. Each
//! peeled node gets a bag holding it, its neighbours and the directed edges
//! that touch it; the two-hop paths through it are folded into direct edges
//! between its neighbours, so the rest of the graph keeps the same
//! reachability distribution. What cannot be peeled is the root. For `w <= 2`
//! a peeled node has at most two neighbours, the folded paths use disjoint
//! edges, and no information is lost.
//!
//! A query lifts the bags that cover `s` or `t`, together with their
//! ancestors, back into the root and undoes the folding those bags did.

mod io;
mod query;

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

pub use query::{extract_query_graph, probtree_estimate, ProbTree, QueryGraph};

use crate::error::{Error, Result};
use crate::graph::{NodeId, UncertainGraph};

pub type BagId = usize;

/// A directed edge of the index: an optional original edge plus the
/// probabilities of paths folded into it, each tagged with the bag that
/// folded it.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedEdge {
    pub source: NodeId,
    pub target: NodeId,
    base: Option<f64>,
    /// Sorted by bag id.
    provenance: Vec<(BagId, f64)>,
}

impl AggregatedEdge {
    pub fn new(source: NodeId, target: NodeId, base: Option<f64>) -> Self {
        AggregatedEdge {
            source,
            target,
            base,
            provenance: Vec::new(),
        }
    }

    /// Probability of the original edge, if there was one.
    pub fn base(&self) -> Option<f64> {
        self.base
    }

    pub fn provenance(&self) -> &[(BagId, f64)] {
        &self.provenance
    }

    /// Noisy-or of the base edge and every contribution.
    pub fn p(&self) -> f64 {
        self.p_excluding(|_| false)
    }

    /// Noisy-or over the base edge and the contributions whose bag is not
    /// excluded. Always evaluated in the same order, so removing and
    /// restoring a contribution reproduces the value bit for bit.
    pub fn p_excluding(&self, excluded: impl Fn(BagId) -> bool) -> f64 {
        let base = self.base.unwrap_or(0.0);
        let mut none = 1.0 - base;
        let mut folded = false;
        for &(bag, c) in &self.provenance {
            if !excluded(bag) {
                none *= 1.0 - c;
                folded = true;
            }
        }
        if folded {
            1.0 - none
        } else {
            base
        }
    }

    pub fn add_contribution(&mut self, bag: BagId, p: f64) {
        let at = self.provenance.partition_point(|&(b, _)| b < bag);
        self.provenance.insert(at, (bag, p));
    }

    /// Removes the contribution of `bag` and returns it.
    pub fn remove_contribution(&mut self, bag: BagId) -> Option<f64> {
        let at = self.provenance.iter().position(|&(b, _)| b == bag)?;
        Some(self.provenance.remove(at).1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub id: BagId,
    /// The node peeled off when the bag was created.
    pub covered: NodeId,
    /// Covered node and its neighbours at that moment, sorted.
    pub nodes: Vec<NodeId>,
    /// Edges that touched the covered node.
    pub edges: Vec<AggregatedEdge>,
    /// `None` means the root.
    pub parent: Option<BagId>,
    /// Root is level 0.
    pub level: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbTreeIndex {
    pub(crate) node_count: usize,
    pub(crate) edge_count: usize,
    pub(crate) width: usize,
    pub(crate) lossy: bool,
    pub(crate) bags: Vec<Bag>,
    pub(crate) root_nodes: Vec<NodeId>,
    pub(crate) root_edges: Vec<AggregatedEdge>,
    /// Bag covering each node, `None` for root nodes.
    pub(crate) covered_by: Vec<Option<BagId>>,
    pub(crate) build_time: std::time::Duration,
}

impl ProbTreeIndex {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_lossy(&self) -> bool {
        self.lossy
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn bag(&self, id: BagId) -> &Bag {
        &self.bags[id]
    }

    pub fn root_nodes(&self) -> &[NodeId] {
        &self.root_nodes
    }

    pub fn root_edges(&self) -> &[AggregatedEdge] {
        &self.root_edges
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Edge count of the graph the index was built from.
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn covering_bag(&self, v: NodeId) -> Option<BagId> {
        self.covered_by[v]
    }

    /// Depth of the deepest bag; 0 when there are no bags.
    pub fn height(&self) -> usize {
        self.bags.iter().map(|b| b.level).max().unwrap_or(0)
    }

    /// Wall time of the build, zero for an index read from disk.
    pub fn build_time(&self) -> std::time::Duration {
        self.build_time
    }

    /// Whether this index was built from a graph of this size.
    pub fn check_graph(&self, graph: &UncertainGraph) -> Result<()> {
        if graph.node_count() != self.node_count || graph.edge_count() != self.edge_count {
            return Err(Error::IndexMismatch {
                index_nodes: self.node_count,
                index_edges: self.edge_count,
                graph_nodes: graph.node_count(),
                graph_edges: graph.edge_count(),
            });
        }
        Ok(())
    }

    fn finish(mut self) -> Self {
        self.covered_by = vec![None; self.node_count];
        for bag in &self.bags {
            self.covered_by[bag.covered] = Some(bag.id);
        }
        self
    }
}

/// Largest width for which the index is exact.
pub const MAX_LOSSLESS_WIDTH: usize = 2;

/// Builds the index. Widths above [`MAX_LOSSLESS_WIDTH`] fold paths that
/// share edges, which loses information; they are refused unless `lossy` is
/// set.
pub fn build_fwd_index(graph: &UncertainGraph, width: usize, lossy: bool) -> Result<ProbTreeIndex> {
    if width == 0 {
        return Err(Error::InvalidParameter("width must be at least 1".into()));
    }
    if width > MAX_LOSSLESS_WIDTH && !lossy {
        return Err(Error::LossyWidth { width });
    }
    let start = Instant::now();
    let n = graph.node_count();
    let mut skeleton: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); n];
    let mut live: HashMap<(NodeId, NodeId), AggregatedEdge> =
        HashMap::with_capacity(graph.edge_count());
    for e in graph.edges() {
        skeleton[e.source].insert(e.target);
        skeleton[e.target].insert(e.source);
        live.insert(
            (e.source, e.target),
            AggregatedEdge::new(e.source, e.target, Some(e.p)),
        );
    }
    // (degree, node) for every node still in the skeleton
    let mut by_degree: BTreeSet<(usize, NodeId)> = (0..n).map(|v| (skeleton[v].len(), v)).collect();
    let mut removed = vec![false; n];
    let mut bags: Vec<Bag> = Vec::new();

    while let Some(&(_, v)) = by_degree.range((1, 0)..=(width, NodeId::MAX)).next() {
        let id = bags.len();
        let neighbours: Vec<NodeId> = skeleton[v].iter().copied().collect();
        let mut edges = Vec::new();
        for &a in &neighbours {
            for key in [(a, v), (v, a)] {
                if let Some(rec) = live.remove(&key) {
                    edges.push(rec);
                }
            }
        }
        let prob = |from: NodeId, to: NodeId| {
            edges
                .iter()
                .find(|r| r.source == from && r.target == to)
                .map_or(0.0, AggregatedEdge::p)
        };
        for &a in &neighbours {
            for &b in &neighbours {
                if a == b {
                    continue;
                }
                let through = prob(a, v) * prob(v, b);
                if through > 0.0 {
                    live.entry((a, b))
                        .or_insert_with(|| AggregatedEdge::new(a, b, None))
                        .add_contribution(id, through);
                }
            }
        }

        by_degree.remove(&(skeleton[v].len(), v));
        removed[v] = true;
        let mut touched: BTreeSet<NodeId> = BTreeSet::new();
        for &a in &neighbours {
            by_degree.remove(&(skeleton[a].len(), a));
            skeleton[a].remove(&v);
            touched.insert(a);
        }
        skeleton[v].clear();
        for &a in &neighbours {
            for &b in &neighbours {
                if a != b {
                    skeleton[a].insert(b);
                }
            }
        }
        for a in touched {
            by_degree.insert((skeleton[a].len(), a));
        }

        let mut nodes = neighbours;
        nodes.push(v);
        nodes.sort_unstable();
        bags.push(Bag {
            id,
            covered: v,
            nodes,
            edges,
            parent: None,
            level: 0,
        });
    }

    assign_parents(&mut bags, n);

    let root_nodes: Vec<NodeId> = (0..n).filter(|&v| !removed[v]).collect();
    let mut root_edges: Vec<AggregatedEdge> = live.into_values().collect();
    root_edges.sort_by_key(|r| (r.source, r.target));

    Ok(ProbTreeIndex {
        node_count: n,
        edge_count: graph.edge_count(),
        width,
        lossy: width > MAX_LOSSLESS_WIDTH,
        bags,
        root_nodes,
        root_edges,
        covered_by: Vec::new(),
        build_time: start.elapsed(),
    }
    .finish())
}

/// Parent of a bag: the first later bag whose nodes include all of its
/// uncovered nodes, else the root. Levels follow from the parents.
fn assign_parents(bags: &mut [Bag], n: usize) {
    let mut containing: Vec<Vec<BagId>> = vec![Vec::new(); n];
    for bag in bags.iter() {
        for &v in &bag.nodes {
            containing[v].push(bag.id);
        }
    }
    for i in 0..bags.len() {
        let rest: Vec<NodeId> = bags[i]
            .nodes
            .iter()
            .copied()
            .filter(|&v| v != bags[i].covered)
            .collect();
        let Some(&anchor) = rest.first() else {
            continue;
        };
        bags[i].parent = containing[anchor]
            .iter()
            .copied()
            .filter(|&j| j > i)
            .find(|&j| rest.iter().all(|v| bags[j].nodes.binary_search(v).is_ok()));
    }
    // parents are created later, so walk from the last bag down
    for i in (0..bags.len()).rev() {
        bags[i].level = bags[i].parent.map_or(1, |p| bags[p].level + 1);
    }
}
