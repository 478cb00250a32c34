//! Lazy propagation sampling.
//!
//! Rather than flipping every out-edge coin each time a node is expanded,
//! every node `v` keeps a visit counter `c_v` and a min-heap that records,
//! for each out-neighbour, the visit at which the connecting edge next
//! exists. The gap to that visit is a geometric draw, so an edge with
//! probability `p` is touched about `1 / p` times less often than by plain
//! Monte Carlo. Counters and heaps live for the whole estimate.
//!
//! [`LpVariant::Legacy`] reschedules a fired edge relative to the current
//! visit instead of the next one. The rescheduled key is then stale one
//! visit early, which makes edges fire too often and overestimates
//! reliability; it is kept to reproduce that error.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Geometric};

use crate::error::{Error, Result};
use crate::estimate::{check_query, Estimate, Estimator};
use crate::graph::{EdgeId, NodeId, UncertainGraph};
use crate::mc::Scratch;
use crate::rng::RandomStream;

/// Number of failures before the first success of a Bernoulli(`p`) trial:
/// `P(X = k) = (1 - p)^k p`.
pub fn geometric_draw<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<u64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "geometric draw needs p in (0, 1], got {p}"
        )));
    }
    let dist = Geometric::new(p).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(dist.sample(rng))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LpVariant {
    /// Fired edges are rescheduled from the next visit on.
    #[default]
    Plus,
    /// Fired edges are rescheduled from the current visit on.
    Legacy,
}

/// Per-node state: visit counter and the schedule of its out-edges.
#[derive(Clone, Debug)]
pub struct LazyNodeState {
    pub counter: u64,
    /// `(visit at which the edge next exists, target, edge)`.
    heap: BinaryHeap<Reverse<(u64, NodeId, EdgeId)>>,
}

impl LazyNodeState {
    /// Smallest scheduled key, if any.
    pub fn next_key(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse((key, _, _))| *key)
    }
}

/// Counters gathered over one estimate.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LazyStats {
    /// Expansions of each node.
    pub visits: Vec<u64>,
    /// Rounds in which each edge existed.
    pub fires: Vec<u64>,
    /// Geometric draws made.
    pub draws: u64,
    /// Reschedules whose key was already behind the node's counter once the
    /// visit ended. Always zero for [`LpVariant::Plus`].
    pub stale_reschedules: u64,
}

struct Lazy<'a> {
    graph: &'a UncertainGraph,
    variant: LpVariant,
    geometric: Vec<Geometric>,
    states: Vec<Option<LazyNodeState>>,
    stats: LazyStats,
    batch: Vec<(NodeId, EdgeId)>,
}

impl Lazy<'_> {
    fn draw(&mut self, e: EdgeId, rng: &mut RandomStream) -> u64 {
        self.stats.draws += 1;
        self.geometric[e].sample(rng)
    }

    /// Expands `v` once. Returns the targets of the edges that exist in this
    /// visit, in heap order, via `self.batch`.
    fn expand(&mut self, v: NodeId, rng: &mut RandomStream) {
        if self.states[v].is_none() {
            let mut heap = BinaryHeap::with_capacity(self.graph.out_degree(v));
            for &e in self.graph.out_edges(v) {
                let x = self.draw(e, rng);
                heap.push(Reverse((x, self.graph.edge(e).target, e)));
            }
            self.states[v] = Some(LazyNodeState { counter: 0, heap });
        }
        let state = self.states[v].as_mut().expect("initialized above");
        let c = state.counter;
        self.batch.clear();
        // Keys below the counter only occur in the legacy variant; they fire
        // at the first visit that finds them.
        while let Some(&Reverse((key, nbr, e))) = state.heap.peek() {
            if key > c {
                break;
            }
            debug_assert!(
                self.variant == LpVariant::Legacy || key == c,
                "key {key} behind counter {c}"
            );
            state.heap.pop();
            self.batch.push((nbr, e));
        }
        let offset = match self.variant {
            LpVariant::Plus => c + 1,
            LpVariant::Legacy => c,
        };
        for i in 0..self.batch.len() {
            let (nbr, e) = self.batch[i];
            self.stats.fires[e] += 1;
            let key = self.draw(e, rng) + offset;
            if key <= c {
                self.stats.stale_reschedules += 1;
            }
            let state = self.states[v].as_mut().expect("initialized above");
            state.heap.push(Reverse((key, nbr, e)));
        }
        let state = self.states[v].as_mut().expect("initialized above");
        state.counter += 1;
        self.stats.visits[v] += 1;
    }
}

/// Runs `k` rounds and returns the hit count with the gathered statistics.
fn run_lazy(
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
    variant: LpVariant,
    rng: &mut RandomStream,
) -> (usize, LazyStats) {
    let mut lazy = Lazy {
        graph,
        variant,
        geometric: graph
            .edges()
            .iter()
            .map(|e| Geometric::new(e.p).expect("edge probabilities lie in (0, 1]"))
            .collect(),
        states: vec![None; graph.node_count()],
        stats: LazyStats {
            visits: vec![0; graph.node_count()],
            fires: vec![0; graph.edge_count()],
            ..LazyStats::default()
        },
        batch: Vec::new(),
    };
    if s == t {
        return (k, lazy.stats);
    }
    let mut scratch = Scratch::new(graph.node_count());
    let mut hits = 0;
    for _ in 0..k {
        scratch.next_round();
        scratch.visit(s);
        scratch.queue.push_back(s);
        'round: while let Some(v) = scratch.queue.pop_front() {
            // the whole visit is completed even when it reaches t, so every
            // counter advances exactly once per expansion
            lazy.expand(v, rng);
            let mut hit = false;
            for &(nbr, _) in &lazy.batch {
                if scratch.visit(nbr) {
                    scratch.queue.push_back(nbr);
                    hit |= nbr == t;
                }
            }
            if hit {
                hits += 1;
                break 'round;
            }
        }
    }
    (hits, lazy.stats)
}

/// Lazy propagation estimate together with its counters.
pub fn lp_run(
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
    variant: LpVariant,
    rng: &mut RandomStream,
) -> Result<(Estimate, LazyStats)> {
    check_query(graph, s, t, k)?;
    let start = Instant::now();
    let (hits, stats) = run_lazy(graph, s, t, k, variant, rng);
    Ok((
        Estimate::new(hits as f64 / k as f64, k, start.elapsed(), rng.seed()),
        stats,
    ))
}

pub fn lp_plus_estimate(
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
    rng: &mut RandomStream,
) -> Result<Estimate> {
    lp_run(graph, s, t, k, LpVariant::Plus, rng).map(|(est, _)| est)
}

pub fn lp_legacy_estimate(
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
    rng: &mut RandomStream,
) -> Result<Estimate> {
    lp_run(graph, s, t, k, LpVariant::Legacy, rng).map(|(est, _)| est)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LpPlus;

impl Estimator for LpPlus {
    fn name(&self) -> String {
        "lp+".into()
    }

    fn estimate(
        &self,
        graph: &UncertainGraph,
        s: NodeId,
        t: NodeId,
        k: usize,
        rng: &mut RandomStream,
    ) -> Result<Estimate> {
        lp_plus_estimate(graph, s, t, k, rng)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LpLegacy;

impl Estimator for LpLegacy {
    fn name(&self) -> String {
        "lp-legacy".into()
    }

    fn estimate(
        &self,
        graph: &UncertainGraph,
        s: NodeId,
        t: NodeId,
        k: usize,
        rng: &mut RandomStream,
    ) -> Result<Estimate> {
        lp_legacy_estimate(graph, s, t, k, rng)
    }
}
