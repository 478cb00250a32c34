//! Recursive sampling over prefix groups.
//!
//! A prefix group fixes some edges present and some absent. Splitting the
//! group on one more edge `e` gives `R = p(e) R_present + (1 - p(e)) R_absent`,
//! and the sample budget is split in the same proportion. A branch whose
//! fixed edges already contain an s-t path (or whose remaining edges contain
//! none) is worth exactly 1 (or 0) and needs no samples at all; once the
//! budget drops to the threshold the branch is estimated by plain Monte
//! Carlo on the conditioned graph.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::estimate::{check_query, Estimate, Estimator};
use crate::graph::{EdgeId, NodeId, UncertainGraph};
use crate::mc::{count_hits, Scratch};
use crate::rng::RandomStream;

pub(crate) const STACK_RED_ZONE: usize = 128 * 1024;
pub(crate) const STACK_SEGMENT: usize = 4 * 1024 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeStatus {
    Free,
    Present,
    Absent,
}

/// Edges forced present (`E1`) or absent (`E2`); all others are free.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrefixGroup {
    status: Vec<EdgeStatus>,
}

impl PrefixGroup {
    /// The empty group over `m` edges.
    pub fn new(m: usize) -> Self {
        PrefixGroup {
            status: vec![EdgeStatus::Free; m],
        }
    }

    pub fn from_sets(m: usize, present: &[EdgeId], absent: &[EdgeId]) -> Result<Self> {
        let mut g = PrefixGroup::new(m);
        for (&e, status) in present
            .iter()
            .map(|e| (e, EdgeStatus::Present))
            .chain(absent.iter().map(|e| (e, EdgeStatus::Absent)))
        {
            match g.status.get(e) {
                None => return Err(Error::InvalidParameter(format!("edge {e} out of range"))),
                Some(EdgeStatus::Free) => g.status[e] = status,
                Some(_) => return Err(Error::InvalidParameter(format!("edge {e} fixed twice"))),
            }
        }
        Ok(g)
    }

    pub fn status(&self, e: EdgeId) -> EdgeStatus {
        self.status[e]
    }

    pub fn set(&mut self, e: EdgeId, status: EdgeStatus) {
        self.status[e] = status;
    }

    pub fn present(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.with_status(EdgeStatus::Present)
    }

    pub fn absent(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.with_status(EdgeStatus::Absent)
    }

    fn with_status(&self, status: EdgeStatus) -> impl Iterator<Item = EdgeId> + '_ {
        self.status
            .iter()
            .enumerate()
            .filter(move |&(_, &x)| x == status)
            .map(|(e, _)| e)
    }

    /// Probability of `e` in the conditioned graph.
    pub(crate) fn conditioned_p(&self, graph: &UncertainGraph, e: EdgeId) -> f64 {
        match self.status[e] {
            EdgeStatus::Free => graph.edge(e).p,
            EdgeStatus::Present => 1.0,
            EdgeStatus::Absent => 0.0,
        }
    }
}

/// Generating probability of the group: `prod_{E1} p(e) * prod_{E2} (1 - p(e))`.
pub fn group_probability(graph: &UncertainGraph, g: &PrefixGroup) -> f64 {
    let present: f64 = g.present().map(|e| graph.edge(e).p).product();
    let absent: f64 = g.absent().map(|e| 1.0 - graph.edge(e).p).product();
    present * absent
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// The forced-present edges contain an s-t path.
    PathFound,
    /// No s-t path survives once the forced-absent edges are removed.
    CutFound,
    Undecided,
}

/// Marks in `scratch` every node reachable from `s` over edges accepted by `keep`.
fn mark_reachable(
    graph: &UncertainGraph,
    g: &PrefixGroup,
    s: NodeId,
    scratch: &mut Scratch,
    keep: impl Fn(EdgeStatus) -> bool,
) {
    scratch.next_round();
    scratch.visit(s);
    scratch.queue.push_back(s);
    while let Some(v) = scratch.queue.pop_front() {
        for &e in graph.out_edges(v) {
            let w = graph.edge(e).target;
            if keep(g.status[e]) && scratch.visit(w) {
                scratch.queue.push_back(w);
            }
        }
    }
}

pub(crate) fn termination(
    graph: &UncertainGraph,
    g: &PrefixGroup,
    s: NodeId,
    t: NodeId,
    scratch: &mut Scratch,
) -> Termination {
    if s == t {
        return Termination::PathFound;
    }
    mark_reachable(graph, g, s, scratch, |x| x == EdgeStatus::Present);
    if scratch.visited(t) {
        return Termination::PathFound;
    }
    mark_reachable(graph, g, s, scratch, |x| x != EdgeStatus::Absent);
    if scratch.visited(t) {
        Termination::Undecided
    } else {
        Termination::CutFound
    }
}

pub fn detect_termination(
    graph: &UncertainGraph,
    g: &PrefixGroup,
    s: NodeId,
    t: NodeId,
) -> Termination {
    termination(graph, g, s, t, &mut Scratch::new(graph.node_count()))
}

/// How the next edge to split on is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EdgeSelection {
    /// Depth first along forced-present edges; the first free edge that
    /// leaves the set reached through forced-present edges.
    #[default]
    Dfs,
    /// The first free edge met by a breadth-first scan over every edge that
    /// is not forced absent.
    Bfs,
}

fn select_dfs(
    graph: &UncertainGraph,
    g: &PrefixGroup,
    s: NodeId,
    scratch: &mut Scratch,
) -> Result<EdgeId> {
    mark_reachable(graph, g, s, scratch, |x| x == EdgeStatus::Present);
    let mut seen = vec![false; graph.node_count()];
    seen[s] = true;
    let mut stack = vec![(s, 0usize)];
    while let Some((v, cursor)) = stack.last_mut() {
        let out = graph.out_edges(*v);
        let Some(&e) = out.get(*cursor) else {
            stack.pop();
            continue;
        };
        *cursor += 1;
        let w = graph.edge(e).target;
        match g.status[e] {
            EdgeStatus::Free if !scratch.visited(w) => return Ok(e),
            EdgeStatus::Present if !seen[w] => {
                seen[w] = true;
                stack.push((w, 0));
            }
            _ => {}
        }
    }
    Err(Error::NoExpandableEdge)
}

/// Up to `limit` free edges in breadth-first order from `s`, walking every
/// edge that is not forced absent. Edges into already visited nodes count.
pub(crate) fn bfs_free_edges(
    graph: &UncertainGraph,
    g: &PrefixGroup,
    s: NodeId,
    limit: usize,
    scratch: &mut Scratch,
) -> Vec<EdgeId> {
    let mut found = Vec::with_capacity(limit.min(graph.edge_count()));
    scratch.next_round();
    scratch.visit(s);
    scratch.queue.push_back(s);
    while let Some(v) = scratch.queue.pop_front() {
        for &e in graph.out_edges(v) {
            let status = g.status[e];
            if status == EdgeStatus::Absent {
                continue;
            }
            if status == EdgeStatus::Free {
                found.push(e);
                if found.len() == limit {
                    return found;
                }
            }
            let w = graph.edge(e).target;
            if scratch.visit(w) {
                scratch.queue.push_back(w);
            }
        }
    }
    found
}

/// Next free edge to split on, in depth-first order from `s`.
pub fn select_expandable_edge(
    graph: &UncertainGraph,
    g: &PrefixGroup,
    s: NodeId,
) -> Result<EdgeId> {
    select_dfs(graph, g, s, &mut Scratch::new(graph.node_count()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RhhParams {
    /// Budgets at or below this are sampled directly.
    pub threshold: usize,
    pub selection: EdgeSelection,
}

impl Default for RhhParams {
    fn default() -> Self {
        RhhParams {
            threshold: 5,
            selection: EdgeSelection::Dfs,
        }
    }
}

/// Record of how a recursive estimate decomposed the query.
#[derive(Clone, Debug, PartialEq)]
pub enum RecursionTree {
    Path,
    Cut,
    /// Monte Carlo over the conditioned graph with `k` samples.
    Sampled {
        k: usize,
    },
    Split {
        k: usize,
        edges: Vec<EdgeId>,
        branches: Vec<Branch>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub weight: f64,
    /// Budget share before a zero share is raised to one sample.
    pub allocated: usize,
    pub tree: RecursionTree,
}

impl RecursionTree {
    /// Same decomposition: equal split edges and branch weights (to 1e-12),
    /// ignoring sample counts.
    pub fn same_shape(&self, other: &RecursionTree) -> bool {
        use RecursionTree::*;
        match (self, other) {
            (Path, Path) | (Cut, Cut) | (Sampled { .. }, Sampled { .. }) => true,
            (
                Split {
                    edges: a,
                    branches: x,
                    ..
                },
                Split {
                    edges: b,
                    branches: y,
                    ..
                },
            ) => {
                a == b
                    && x.len() == y.len()
                    && x.iter().zip(y).all(|(p, q)| {
                        (p.weight - q.weight).abs() < 1e-12 && p.tree.same_shape(&q.tree)
                    })
            }
            _ => false,
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            RecursionTree::Split { branches, .. } => {
                1 + branches.iter().map(|b| b.tree.size()).sum::<usize>()
            }
            _ => 1,
        }
    }
}

pub(crate) fn check_threshold(threshold: usize) -> Result<()> {
    if threshold == 0 {
        return Err(Error::InvalidParameter(
            "threshold must be at least 1".into(),
        ));
    }
    Ok(())
}

struct Recursion<'a> {
    graph: &'a UncertainGraph,
    s: NodeId,
    t: NodeId,
    params: RhhParams,
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
        if k <= self.params.threshold {
            return Ok((self.sample(k, rng), traced(RecursionTree::Sampled { k })));
        }
        let e = match self.params.selection {
            EdgeSelection::Dfs => select_dfs(self.graph, &self.group, self.s, &mut self.scratch)?,
            EdgeSelection::Bfs => {
                *bfs_free_edges(self.graph, &self.group, self.s, 1, &mut self.scratch)
                    .first()
                    .ok_or(Error::NoExpandableEdge)?
            }
        };
        let p = self.graph.edge(e).p;
        let k_present = (k as f64 * p).floor() as usize;
        let mut value = 0.0;
        let mut branches = Vec::new();
        for (status, weight, allocated) in [
            (EdgeStatus::Absent, 1.0 - p, k - k_present),
            (EdgeStatus::Present, p, k_present),
        ] {
            if weight <= 0.0 {
                continue;
            }
            self.group.set(e, status);
            let result = stacker::maybe_grow(STACK_RED_ZONE, STACK_SEGMENT, || {
                self.run(allocated.max(1), rng)
            });
            self.group.set(e, EdgeStatus::Free);
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
            edges: vec![e],
            branches,
        });
        Ok((value, tree))
    }
}

fn run_rhh(
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
    params: RhhParams,
    rng: &mut RandomStream,
    trace: bool,
) -> Result<(Estimate, Option<RecursionTree>)> {
    check_query(graph, s, t, k)?;
    check_threshold(params.threshold)?;
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

pub fn rhh_estimate(
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
    params: RhhParams,
    rng: &mut RandomStream,
) -> Result<Estimate> {
    run_rhh(graph, s, t, k, params, rng, false).map(|(est, _)| est)
}

/// [`rhh_estimate`] that also returns the recursion tree.
pub fn rhh_trace(
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
    params: RhhParams,
    rng: &mut RandomStream,
) -> Result<(Estimate, RecursionTree)> {
    let (est, tree) = run_rhh(graph, s, t, k, params, rng, true)?;
    Ok((est, tree.expect("traced run returns a tree")))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Rhh {
    pub params: RhhParams,
}

impl Estimator for Rhh {
    fn name(&self) -> String {
        "rhh".into()
    }

    fn estimate(
        &self,
        graph: &UncertainGraph,
        s: NodeId,
        t: NodeId,
        k: usize,
        rng: &mut RandomStream,
    ) -> Result<Estimate> {
        rhh_estimate(graph, s, t, k, self.params, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::mc_variance;
    use crate::oracle::exact_reliability;
    use proptest::prelude::*;

    fn chain() -> UncertainGraph {
        UncertainGraph::from_triples(3, &[(0, 1, 0.5), (1, 2, 0.5)]).unwrap()
    }

    fn diamond() -> UncertainGraph {
        UncertainGraph::from_triples(4, &[(0, 1, 0.5), (0, 2, 0.5), (1, 3, 0.5), (2, 3, 0.5)])
            .unwrap()
    }

    #[test]
    fn group_probability_examples() {
        let g = UncertainGraph::from_triples(3, &[(0, 1, 0.5), (1, 2, 0.8), (0, 2, 1.0)]).unwrap();
        let group = PrefixGroup::from_sets(3, &[0], &[1]).unwrap();
        assert!((group_probability(&g, &group) - 0.1).abs() < 1e-15);
        let g2 = UncertainGraph::from_triples(3, &[(0, 1, 0.5), (1, 2, 0.2)]).unwrap();
        let group = PrefixGroup::from_sets(2, &[0], &[1]).unwrap();
        assert!((group_probability(&g2, &group) - 0.4).abs() < 1e-15);
        assert_eq!(group_probability(&g, &PrefixGroup::new(3)), 1.0);
        assert_eq!(
            group_probability(&g, &PrefixGroup::from_sets(3, &[], &[2]).unwrap()),
            0.0
        );
        assert!(PrefixGroup::from_sets(3, &[1], &[1]).is_err());
    }

    #[test]
    fn termination_examples() {
        let g = chain();
        let direct = UncertainGraph::from_triples(2, &[(0, 1, 0.3)]).unwrap();
        let path = PrefixGroup::from_sets(1, &[0], &[]).unwrap();
        assert_eq!(
            detect_termination(&direct, &path, 0, 1),
            Termination::PathFound
        );
        let cut = PrefixGroup::from_sets(2, &[], &[0]).unwrap();
        assert_eq!(detect_termination(&g, &cut, 0, 2), Termination::CutFound);
        assert_eq!(
            detect_termination(&g, &PrefixGroup::new(2), 0, 2),
            Termination::Undecided
        );
        assert_eq!(
            detect_termination(&g, &PrefixGroup::new(2), 2, 2),
            Termination::PathFound
        );
    }

    #[test]
    fn dfs_selection_examples() {
        let g = chain();
        assert_eq!(
            select_expandable_edge(&g, &PrefixGroup::new(2), 0).unwrap(),
            0
        );
        let after = PrefixGroup::from_sets(2, &[0], &[]).unwrap();
        assert_eq!(select_expandable_edge(&g, &after, 0).unwrap(), 1);
        let star =
            UncertainGraph::from_triples(4, &[(0, 3, 0.5), (0, 1, 0.5), (0, 2, 0.5)]).unwrap();
        assert_eq!(
            select_expandable_edge(&star, &PrefixGroup::new(3), 0).unwrap(),
            0
        );
        let skip = PrefixGroup::from_sets(3, &[], &[0]).unwrap();
        assert_eq!(select_expandable_edge(&star, &skip, 0).unwrap(), 1);
        let all = PrefixGroup::from_sets(3, &[0, 1, 2], &[]).unwrap();
        assert!(matches!(
            select_expandable_edge(&star, &all, 0),
            Err(Error::NoExpandableEdge)
        ));
    }

    #[test]
    fn dfs_descends_before_siblings_and_skips_useless_edges() {
        // 0 -> 1 forced, 0 -> 2 free, 1 -> 0 free (target already reached), 1 -> 3 free
        let g =
            UncertainGraph::from_triples(4, &[(0, 1, 0.5), (0, 2, 0.5), (1, 0, 0.5), (1, 3, 0.5)])
                .unwrap();
        let group = PrefixGroup::from_sets(4, &[0], &[]).unwrap();
        assert_eq!(select_expandable_edge(&g, &group, 0).unwrap(), 3);
        let group = PrefixGroup::from_sets(4, &[0], &[3]).unwrap();
        assert_eq!(select_expandable_edge(&g, &group, 0).unwrap(), 1);
    }

    #[test]
    fn single_edge_is_exact_above_threshold() {
        let g = UncertainGraph::from_triples(2, &[(0, 1, 0.7)]).unwrap();
        for k in [6, 7, 100, 1001] {
            let est = rhh_estimate(
                &g,
                0,
                1,
                k,
                RhhParams::default(),
                &mut RandomStream::new(k as u64),
            )
            .unwrap();
            assert_eq!(est.value, 0.7);
        }
        // at or below the threshold the query is sampled
        let est =
            rhh_estimate(&g, 0, 1, 4, RhhParams::default(), &mut RandomStream::new(0)).unwrap();
        assert!([0.0, 0.25, 0.5, 0.75, 1.0].contains(&est.value));
    }

    #[test]
    fn same_node_is_certain() {
        let est = rhh_estimate(
            &chain(),
            1,
            1,
            50,
            RhhParams::default(),
            &mut RandomStream::new(0),
        )
        .unwrap();
        assert_eq!(est.value, 1.0);
    }

    #[test]
    fn series_parallel_is_analytic() {
        let g = UncertainGraph::from_triples(3, &[(0, 2, 0.75), (0, 1, 0.5), (1, 2, 0.5)]).unwrap();
        let (est, tree) = rhh_trace(
            &g,
            0,
            2,
            1000,
            RhhParams::default(),
            &mut RandomStream::new(0),
        )
        .unwrap();
        assert!((est.value - 0.8125).abs() < 1e-12);
        assert_eq!(tree.size(), 7);
    }

    #[test]
    fn budget_is_conserved_at_every_split() {
        fn check(tree: &RecursionTree) {
            if let RecursionTree::Split { k, branches, .. } = tree {
                assert_eq!(branches.iter().map(|b| b.allocated).sum::<usize>(), *k);
                for b in branches {
                    match &b.tree {
                        RecursionTree::Sampled { k } | RecursionTree::Split { k, .. } => {
                            assert_eq!(*k, b.allocated.max(1))
                        }
                        _ => {}
                    }
                    check(&b.tree);
                }
            }
        }
        let g = UncertainGraph::from_triples(
            5,
            &[
                (0, 1, 0.3),
                (0, 2, 0.8),
                (1, 3, 0.6),
                (2, 3, 0.4),
                (3, 4, 0.7),
                (2, 1, 0.5),
                (1, 4, 0.2),
            ],
        )
        .unwrap();
        for k in [1, 6, 37, 500] {
            let (_, tree) =
                rhh_trace(&g, 0, 4, k, RhhParams::default(), &mut RandomStream::new(1)).unwrap();
            check(&tree);
        }
    }

    #[test]
    fn diamond_unbiased_with_less_variance_than_mc() {
        let g = diamond();
        let (runs, k) = (200u64, 2000usize);
        let root = RandomStream::new(17);
        let values: Vec<f64> = (0..runs)
            .map(|i| {
                rhh_estimate(&g, 0, 3, k, RhhParams::default(), &mut root.split(i))
                    .unwrap()
                    .value
            })
            .collect();
        let mean = values.iter().sum::<f64>() / runs as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        let mc = mc_variance(0.4375, k);
        assert!(
            (mean - 0.4375).abs() <= 3.0 * (mc / runs as f64).sqrt(),
            "{mean}"
        );
        assert!(var <= mc, "{var} vs {mc}");
    }

    #[test]
    fn deep_recursion_does_not_overflow() {
        let n = 3000;
        let triples: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        let g = UncertainGraph::from_triples(n, &triples).unwrap();
        let est = rhh_estimate(
            &g,
            0,
            n - 1,
            100,
            RhhParams::default(),
            &mut RandomStream::new(0),
        )
        .unwrap();
        assert_eq!(est.value, 1.0);
    }

    fn small_graph() -> impl Strategy<Value = UncertainGraph> {
        (2usize..6).prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v)))
                .collect();
            proptest::sample::subsequence(pairs.clone(), 0..=pairs.len().min(8)).prop_flat_map(
                move |chosen| {
                    let k = chosen.len();
                    proptest::collection::vec(0.2f64..=1.0, k).prop_map(move |ps| {
                        let triples: Vec<_> = chosen
                            .iter()
                            .zip(ps)
                            .map(|(&(u, v), p)| (u, v, p))
                            .collect();
                        UncertainGraph::from_triples(n, &triples).unwrap()
                    })
                },
            )
        })
    }

    proptest! {
        #[test]
        fn large_budget_gives_exact_value(g in small_graph(), bfs in any::<bool>()) {
            // every leaf weight is at least 0.2^8, so 1e9 samples never reach the threshold
            let params = RhhParams {
                selection: if bfs { EdgeSelection::Bfs } else { EdgeSelection::Dfs },
                ..RhhParams::default()
            };
            let t = g.node_count() - 1;
            let (est, tree) = rhh_trace(&g, 0, t, 1_000_000_000, params, &mut RandomStream::new(0)).unwrap();
            let exact = exact_reliability(&g, 0, t).unwrap();
            prop_assert!((est.value - exact).abs() < 1e-12, "{} vs {}", est.value, exact);
            prop_assert!(tree.size() >= 1);
        }
    }
}
