//! Recursive stratified sampling.
//!
//! The first `r` undetermined edges met by a BFS from `s` split the
//! probability space into `r + 1` disjoint strata: stratum 0 has all of them
//! absent, stratum `i` has edge `i` present, the edges before it absent and
//! the edges after it left open. Each stratum gets a share of the budget
//! proportional to its probability and is estimated recursively on the
//! correspondingly simplified graph.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::estimate::{check_query, Estimate, Estimator};
use crate::graph::{Edge, EdgeId, NodeId, UncertainGraph};
use crate::mc::{count_hits, Scratch};
use crate::rhh::{
    bfs_free_edges, check_threshold, termination, Branch, EdgeStatus, PrefixGroup, RecursionTree,
    Termination, STACK_RED_ZONE, STACK_SEGMENT,
};
use crate::rng::RandomStream;

/// Selected edges and the probability of each stratum.
#[derive(Clone, Debug, PartialEq)]
pub struct StratumPlan {
    edges: Vec<EdgeId>,
    probabilities: Vec<f64>,
}

impl StratumPlan {
    /// The `r` selected edges in selection order.
    pub fn edges(&self) -> &[EdgeId] {
        &self.edges
    }

    /// `pi_0 ..= pi_r`.
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Status of selected edge `j` in stratum `i`: `Some(false)` absent,
    /// `Some(true)` present, `None` undetermined.
    pub fn status(&self, i: usize, j: usize) -> Option<bool> {
        assert!(
            i <= self.edges.len() && j < self.edges.len(),
            "stratum or edge out of range"
        );
        if i == 0 || j + 1 < i {
            Some(false)
        } else if j + 1 == i {
            Some(true)
        } else {
            None
        }
    }
}

/// Stratum probabilities for edges with probabilities `ps`:
/// `pi_0 = prod (1 - p_j)` and `pi_i = p_i prod_{j < i} (1 - p_j)`.
pub fn stratum_probabilities(ps: &[f64]) -> Vec<f64> {
    let mut pi = vec![0.0; ps.len() + 1];
    let mut none_before = 1.0;
    for (i, &p) in ps.iter().enumerate() {
        pi[i + 1] = p * none_before;
        none_before *= 1.0 - p;
    }
    pi[0] = none_before;
    pi
}

/// Splits `k` in proportion to `weights`: floors first, then one extra sample
/// each to the largest fractional parts (ties to the lower index). Zero
/// weights receive nothing.
pub fn allocate_samples(weights: &[f64], k: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * k as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|x| (x.floor() as usize).min(k)).collect();
    let mut remaining = k.saturating_sub(alloc.iter().sum());
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order
        .iter()
        .cycle()
        .take(if order.is_empty() { 0 } else { remaining })
    {
        alloc[i] += 1;
        remaining -= 1;
    }
    debug_assert_eq!(remaining, 0);
    alloc
}

/// Strata over the first `r` edges met by a BFS from `s`.
pub fn build_strata(graph: &UncertainGraph, s: NodeId, r: usize) -> Result<StratumPlan> {
    graph.check_node(s)?;
    let group = PrefixGroup::new(graph.edge_count());
    plan_for(graph, &group, s, r, &mut Scratch::new(graph.node_count()))
}

fn plan_for(
    graph: &UncertainGraph,
    group: &PrefixGroup,
    s: NodeId,
    r: usize,
    scratch: &mut Scratch,
) -> Result<StratumPlan> {
    if r == 0 {
        return Err(Error::InvalidParameter("r must be at least 1".into()));
    }
    let edges = bfs_free_edges(graph, group, s, r, scratch);
    if edges.len() < r {
        return Err(Error::InsufficientEdges {
            found: edges.len(),
            required: r,
        });
    }
    let ps: Vec<f64> = edges.iter().map(|&e| graph.edge(e).p).collect();
    Ok(StratumPlan {
        probabilities: stratum_probabilities(&ps),
        edges,
    })
}

fn apply_stratum(group: &mut PrefixGroup, plan: &StratumPlan, i: usize) {
    for (j, &e) in plan.edges.iter().enumerate() {
        match plan.status(i, j) {
            Some(true) => group.set(e, EdgeStatus::Present),
            Some(false) => group.set(e, EdgeStatus::Absent),
            None => {}
        }
    }
}

fn clear_stratum(group: &mut PrefixGroup, plan: &StratumPlan) {
    for &e in &plan.edges {
        group.set(e, EdgeStatus::Free);
    }
}

/// Graph of stratum `i`: absent edges removed, present edges certain, and
/// edges whose source cannot be reached from `s` dropped. Node ids are kept.
pub fn simplify_graph(
    graph: &UncertainGraph,
    plan: &StratumPlan,
    i: usize,
    s: NodeId,
) -> Result<UncertainGraph> {
    graph.check_node(s)?;
    if i > plan.edges.len() {
        return Err(Error::InvalidParameter(format!("stratum {i} out of range")));
    }
    let mut group = PrefixGroup::new(graph.edge_count());
    apply_stratum(&mut group, plan, i);
    let mut scratch = Scratch::new(graph.node_count());
    // all non-absent edges as potentially present
    bfs_free_edges(graph, &group, s, usize::MAX, &mut scratch);
    let edges: Vec<Edge> = graph
        .edges()
        .iter()
        .enumerate()
        .filter(|&(e, edge)| group.status(e) != EdgeStatus::Absent && scratch.visited(edge.source))
        .map(|(e, edge)| Edge {
            p: group.conditioned_p(graph, e),
            ..*edge
        })
        .collect();
    UncertainGraph::with_labels(graph.labels().to_vec(), edges)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RssParams {
    /// Edges per stratification step.
    pub r: usize,
    /// Budgets below this are sampled directly.
    pub threshold: usize,
}

impl Default for RssParams {
    fn default() -> Self {
        RssParams {
            r: 50,
            threshold: 5,
        }
    }
}

struct Recursion<'a> {
    graph: &'a UncertainGraph,
    s: NodeId,
    t: NodeId,
    params: RssParams,
    group: PrefixGroup,
    scratch: Scratch,
    trace: bool,
}

impl Recursion<'_> {
    fn sample(&self, k: usize, rng: &mut RandomStream) -> f64 {
        let (graph, group) = (self.graph, &self.group);
        let hits = count_hits(
            graph,
            self.s,
            self.t,
            k,
            &|e| group.conditioned_p(graph, e),
            true,
            rng,
        );
        hits as f64 / k as f64
    }

    fn run(&mut self, k: usize, rng: &mut RandomStream) -> Result<(f64, Option<RecursionTree>)> {
        let trace = self.trace;
        let traced = move |tree: RecursionTree| if trace { Some(tree) } else { None };
        match termination(self.graph, &self.group, self.s, self.t, &mut self.scratch) {
            Termination::PathFound => return Ok((1.0, traced(RecursionTree::Path))),
            Termination::CutFound => return Ok((0.0, traced(RecursionTree::Cut))),
            Termination::Undecided => {}
        }
        if k < self.params.threshold {
            return Ok((self.sample(k, rng), traced(RecursionTree::Sampled { k })));
        }
        let plan = match plan_for(
            self.graph,
            &self.group,
            self.s,
            self.params.r,
            &mut self.scratch,
        ) {
            Ok(plan) => plan,
            Err(Error::InsufficientEdges { .. }) => {
                return Ok((self.sample(k, rng), traced(RecursionTree::Sampled { k })));
            }
            Err(e) => return Err(e),
        };
        let alloc = allocate_samples(&plan.probabilities, k);
        let mut value = 0.0;
        let mut branches = Vec::new();
        for (i, (&weight, &allocated)) in plan.probabilities.iter().zip(&alloc).enumerate() {
            if weight <= 0.0 {
                continue;
            }
            apply_stratum(&mut self.group, &plan, i);
            let result = stacker::maybe_grow(STACK_RED_ZONE, STACK_SEGMENT, || {
                self.run(allocated.max(1), rng)
            });
            clear_stratum(&mut self.group, &plan);
            let (v, tree) = result?;
            value += weight * v;
            if let Some(tree) = tree {
                branches.push(Branch {
                    weight,
                    allocated,
                    tree,
                });
            }
        }
        let tree = traced(RecursionTree::Split {
            k,
            edges: plan.edges,
            branches,
        });
        Ok((value, tree))
    }
}

fn run_rss(
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
    params: RssParams,
    rng: &mut RandomStream,
    trace: bool,
) -> Result<(Estimate, Option<RecursionTree>)> {
    check_query(graph, s, t, k)?;
    check_threshold(params.threshold)?;
    if params.r == 0 {
        return Err(Error::InvalidParameter("r must be at least 1".into()));
    }
    let start = Instant::now();
    let mut rec = Recursion {
        graph,
        s,
        t,
        params,
        group: PrefixGroup::new(graph.edge_count()),
        scratch: Scratch::new(graph.node_count()),
        trace,
    };
    let (value, tree) = rec.run(k, rng)?;
    Ok((Estimate::new(value, k, start.elapsed(), rng.seed()), tree))
}

pub fn rss_estimate(
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
    params: RssParams,
    rng: &mut RandomStream,
) -> Result<Estimate> {
    run_rss(graph, s, t, k, params, rng, false).map(|(est, _)| est)
}

/// [`rss_estimate`] that also returns the recursion tree.
pub fn rss_trace(
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
    params: RssParams,
    rng: &mut RandomStream,
) -> Result<(Estimate, RecursionTree)> {
    let (est, tree) = run_rss(graph, s, t, k, params, rng, true)?;
    Ok((est, tree.expect("traced run returns a tree")))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Rss {
    pub params: RssParams,
}

impl Estimator for Rss {
    fn name(&self) -> String {
        "rss".into()
    }

    fn estimate(
        &self,
        graph: &UncertainGraph,
        s: NodeId,
        t: NodeId,
        k: usize,
        rng: &mut RandomStream,
    ) -> Result<Estimate> {
        rss_estimate(graph, s, t, k, self.params, rng)
    }
}
