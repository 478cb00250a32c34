//! Exact reliability by enumerating every possible world.
//!
//! This is the ground truth the estimators are tested against, so it shares
//! no code with them: worlds are enumerated as bit masks over the edge list
//! and reachability is a plain bit-parallel closure.

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeId, NodeId, PossibleWorld, UncertainGraph};

/// Largest edge count [`exact_reliability`] will enumerate.
pub const MAX_EXACT_EDGES: usize = 25;

/// `Pr(world)`: product of `p(e)` over present edges and `1 - p(e)` over
/// absent ones.
pub fn world_probability(graph: &UncertainGraph, world: &PossibleWorld) -> f64 {
    assert_eq!(world.present.len(), graph.edge_count(), "world mask length");
    graph
        .edges()
        .iter()
        .zip(&world.present)
        .map(|(e, &present)| if present { e.p } else { 1.0 - e.p })
        .product()
}

/// Sum of `Pr(G)` over every world `G` in which `t` is reachable from `s`.
pub fn exact_reliability(graph: &UncertainGraph, s: NodeId, t: NodeId) -> Result<f64> {
    graph.check_node(s)?;
    graph.check_node(t)?;
    let m = graph.edge_count();
    if m > MAX_EXACT_EDGES {
        return Err(Error::EdgeBudgetExceeded {
            edges: m,
            limit: MAX_EXACT_EDGES,
        });
    }
    if s == t {
        return Ok(1.0);
    }

    // Compact the endpoints: at most 2 * 25 nodes, so one u64 holds a node set.
    let mut local = vec![usize::MAX; graph.node_count()];
    let mut count = 0;
    let mut id = |v: NodeId| {
        if local[v] == usize::MAX {
            local[v] = count;
            count += 1;
        }
        local[v]
    };
    let src = id(s);
    let dst = id(t);
    let edges: Vec<(usize, usize)> = graph
        .edges()
        .iter()
        .map(|e| (id(e.source), id(e.target)))
        .collect();
    let probs: Vec<f64> = graph.edges().iter().map(|e| e.p).collect();

    let mut total = 0.0;
    enumerate(&probs, 0, 0, 1.0, &mut |mask, pr| {
        if closure_reaches(&edges, mask, src, dst) {
            total += pr;
        }
    });
    Ok(total)
}

fn enumerate(probs: &[f64], e: usize, mask: u32, pr: f64, leaf: &mut impl FnMut(u32, f64)) {
    if e == probs.len() {
        leaf(mask, pr);
        return;
    }
    let p = probs[e];
    if p > 0.0 {
        enumerate(probs, e + 1, mask | 1 << e, pr * p, leaf);
    }
    if p < 1.0 {
        enumerate(probs, e + 1, mask, pr * (1.0 - p), leaf);
    }
}

fn closure_reaches(edges: &[(usize, usize)], mask: u32, s: usize, t: usize) -> bool {
    let mut reached = 1u64 << s;
    loop {
        let before = reached;
        for (e, &(u, v)) in edges.iter().enumerate() {
            if mask >> e & 1 == 1 && reached >> u & 1 == 1 {
                reached |= 1 << v;
            }
        }
        if reached >> t & 1 == 1 {
            return true;
        }
        if reached == before {
            return false;
        }
    }
}

/// Copy of `graph` in which edge `e` is certain (`p = 1`).
pub fn force_present(graph: &UncertainGraph, e: EdgeId) -> UncertainGraph {
    let mut probs: Vec<f64> = graph.edges().iter().map(|x| x.p).collect();
    probs[e] = 1.0;
    graph
        .with_probabilities(&probs)
        .expect("valid graph stays valid")
}

/// Copy of `graph` without edge `e`; later edge ids shift down by one.
pub fn force_absent(graph: &UncertainGraph, e: EdgeId) -> UncertainGraph {
    let edges: Vec<Edge> = graph
        .edges()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != e)
        .map(|(_, x)| *x)
        .collect();
    UncertainGraph::with_labels(graph.labels().to_vec(), edges).expect("valid graph stays valid")
}
