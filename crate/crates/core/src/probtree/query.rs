use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use super::{BagId, ProbTreeIndex};
use crate::error::{Error, Result};
use crate::estimate::{Estimate, Estimator};
use crate::graph::{Edge, NodeId, UncertainGraph};
use crate::mc::Mc;
use crate::rng::RandomStream;

/// Graph a query runs on, with its nodes renumbered densely.
#[derive(Clone, Debug)]
pub struct QueryGraph {
    pub graph: UncertainGraph,
    pub source: NodeId,
    pub target: NodeId,
    /// Original id of every local node.
    pub nodes: Vec<NodeId>,
    /// Bags merged back into the root, in id order.
    pub lifted: Vec<BagId>,
}

fn check(index: &ProbTreeIndex, v: NodeId) -> Result<()> {
    if v >= index.node_count {
        return Err(Error::NodeOutOfRange {
            id: v,
            nodes: index.node_count,
        });
    }
    Ok(())
}

/// Root plus every bag covering `s` or `t` and all their ancestors, with
/// the paths those bags folded into other edges taken back out.
pub fn extract_query_graph(index: &ProbTreeIndex, s: NodeId, t: NodeId) -> Result<QueryGraph> {
    check(index, s)?;
    check(index, t)?;
    let mut lifted = vec![false; index.bags.len()];
    for v in [s, t] {
        let mut bag = index.covered_by[v];
        while let Some(b) = bag {
            if lifted[b] {
                break;
            }
            lifted[b] = true;
            bag = index.bags[b].parent;
        }
    }
    let records = index.root_edges.iter().chain(
        index
            .bags
            .iter()
            .filter(|b| lifted[b.id])
            .flat_map(|b| b.edges.iter()),
    );
    let kept: Vec<(NodeId, NodeId, f64)> = records
        .filter_map(|r| {
            let p = r.p_excluding(|b| lifted[b]);
            (p > 0.0).then_some((r.source, r.target, p))
        })
        .collect();

    let mut nodes: BTreeSet<NodeId> = [s, t].into();
    for &(u, v, _) in &kept {
        nodes.insert(u);
        nodes.insert(v);
    }
    let nodes: Vec<NodeId> = nodes.into_iter().collect();
    let local = |v: NodeId| nodes.binary_search(&v).expect("endpoint collected above");
    let edges: Vec<Edge> = kept
        .iter()
        .map(|&(u, v, p)| Edge {
            source: local(u),
            target: local(v),
            p,
        })
        .collect();
    let labels = nodes.iter().map(|v| v.to_string()).collect();
    Ok(QueryGraph {
        graph: UncertainGraph::with_labels(labels, edges)?,
        source: local(s),
        target: local(t),
        lifted: (0..lifted.len()).filter(|&b| lifted[b]).collect(),
        nodes,
    })
}

/// Runs `inner` on the query graph of `(s, t)`. The reported time covers
/// extraction and estimation.
pub fn probtree_estimate(
    index: &ProbTreeIndex,
    s: NodeId,
    t: NodeId,
    k: usize,
    inner: &dyn Estimator,
    rng: &mut RandomStream,
) -> Result<Estimate> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "sample count K must be at least 1".into(),
        ));
    }
    let start = Instant::now();
    let query = extract_query_graph(index, s, t)?;
    let mut est = inner.estimate(&query.graph, query.source, query.target, k, rng)?;
    est.elapsed = start.elapsed();
    Ok(est)
}

/// Index-backed estimator; the index must come from the graph passed to
/// [`Estimator::estimate`].
#[derive(Clone)]
pub struct ProbTree {
    pub index: Arc<ProbTreeIndex>,
    pub inner: Arc<dyn Estimator>,
}

impl ProbTree {
    pub fn new(index: Arc<ProbTreeIndex>, inner: Arc<dyn Estimator>) -> Self {
        ProbTree { index, inner }
    }

    /// Index of width 2 with Monte Carlo at the root.
    pub fn build(graph: &UncertainGraph) -> Result<Self> {
        let index = super::build_fwd_index(graph, 2, false)?;
        Ok(ProbTree::new(Arc::new(index), Arc::new(Mc)))
    }
}

impl std::fmt::Debug for ProbTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProbTree")
            .field("bags", &self.index.bags.len())
            .field("inner", &self.inner.name())
            .finish()
    }
}

impl Estimator for ProbTree {
    fn name(&self) -> String {
        "probtree".into()
    }

    fn estimate(
        &self,
        graph: &UncertainGraph,
        s: NodeId,
        t: NodeId,
        k: usize,
        rng: &mut RandomStream,
    ) -> Result<Estimate> {
        self.index.check_graph(graph)?;
        probtree_estimate(&self.index, s, t, k, self.inner.as_ref(), rng)
    }
}

#[cfg(test)]
mod tests {
    use super::super::build_fwd_index;
    use super::super::tests::fixture;
    use super::*;
    use crate::mc::mc_estimate;
    use crate::oracle::exact_reliability;
    use crate::rss::{Rss, RssParams};
    use proptest::prelude::*;

    #[test]
    fn root_query_needs_no_lifting() {
        let g = fixture();
        let index = build_fwd_index(&g, 2, false).unwrap();
        let q = extract_query_graph(&index, 1, 2).unwrap();
        assert!(q.lifted.is_empty());
        assert_eq!(q.nodes, vec![0, 1, 2, 6]);
        assert_eq!(q.graph.edge_count(), index.root_edges().len());
        let exact = exact_reliability(&q.graph, q.source, q.target).unwrap();
        assert!((exact - exact_reliability(&g, 1, 2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn lifting_one_bag_leaves_unrelated_bags_out() {
        let g = fixture();
        let index = build_fwd_index(&g, 2, false).unwrap();
        let q = extract_query_graph(&index, 5, 2).unwrap();
        // bag 2 covers 5; the bags of 3 and 4 stay folded
        assert_eq!(q.lifted, vec![2]);
        assert_eq!(q.nodes, vec![0, 1, 2, 5, 6]);
        let six_one = q
            .graph
            .edges()
            .iter()
            .find(|e| (q.nodes[e.source], q.nodes[e.target]) == (6, 1))
            .unwrap();
        assert_eq!(six_one.p, 0.75);
        let exact = exact_reliability(&q.graph, q.source, q.target).unwrap();
        assert!((exact - exact_reliability(&g, 5, 2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn lifting_follows_ancestors() {
        let g = fixture();
        let index = build_fwd_index(&g, 2, false).unwrap();
        let q = extract_query_graph(&index, 0, 3).unwrap();
        assert_eq!(q.lifted, vec![0, 1]);
        for (s, t) in [(0, 3), (3, 5), (4, 1), (6, 3)] {
            let q = extract_query_graph(&index, s, t).unwrap();
            let exact = exact_reliability(&q.graph, q.source, q.target).unwrap();
            assert!(
                (exact - exact_reliability(&g, s, t).unwrap()).abs() < 1e-12,
                "{s} -> {t}"
            );
        }
        assert!(extract_query_graph(&index, 0, 7).is_err());
    }

    #[test]
    fn mc_on_an_unpeeled_graph_is_plain_mc() {
        // every node has degree 3, so nothing is peeled and the root is the graph
        let triples: Vec<_> = (0..4)
            .flat_map(|u| {
                (0..4)
                    .filter(move |&v| v != u)
                    .map(move |v| (u, v, 0.3 + 0.05 * (u + v) as f64))
            })
            .collect();
        let g = UncertainGraph::from_triples(4, &triples).unwrap();
        let tree = ProbTree::build(&g).unwrap();
        assert!(tree.index.bags().is_empty());
        for seed in 0..5 {
            let a = tree
                .estimate(&g, 0, 3, 2000, &mut RandomStream::new(seed))
                .unwrap();
            let b = mc_estimate(&g, 0, 3, 2000, &mut RandomStream::new(seed)).unwrap();
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn fixture_estimate_within_three_sigma() {
        let g = fixture();
        let tree = ProbTree::build(&g).unwrap();
        let exact = exact_reliability(&g, 5, 2).unwrap();
        let k = 10_000;
        let est = tree
            .estimate(&g, 5, 2, k, &mut RandomStream::new(4))
            .unwrap();
        assert!((est.value - exact).abs() <= 3.0 * (exact * (1.0 - exact) / k as f64).sqrt());
    }

    #[test]
    fn stratified_inner_estimator_is_unbiased() {
        let g = fixture();
        let index = Arc::new(build_fwd_index(&g, 2, false).unwrap());
        let tree = ProbTree::new(
            index,
            Arc::new(Rss {
                params: RssParams { r: 2, threshold: 5 },
            }),
        );
        let exact = exact_reliability(&g, 3, 1).unwrap();
        let (runs, k) = (100u64, 1000usize);
        let root = RandomStream::new(6);
        let mean = (0..runs)
            .map(|i| {
                tree.estimate(&g, 3, 1, k, &mut root.split(i))
                    .unwrap()
                    .value
            })
            .sum::<f64>()
            / runs as f64;
        let sigma = (exact * (1.0 - exact) / (runs as f64 * k as f64)).sqrt();
        assert!((mean - exact).abs() <= 4.0 * sigma, "{mean} vs {exact}");
    }

    #[test]
    fn rejects_an_index_from_another_graph() {
        let tree = ProbTree::build(&fixture()).unwrap();
        let other = UncertainGraph::from_triples(2, &[(0, 1, 0.5)]).unwrap();
        assert!(matches!(
            tree.estimate(&other, 0, 1, 10, &mut RandomStream::new(0)),
            Err(Error::IndexMismatch { .. })
        ));
    }

    pub(crate) fn small_graph() -> impl Strategy<Value = UncertainGraph> {
        (2usize..8).prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v)))
                .collect();
            proptest::sample::subsequence(pairs.clone(), 0..=pairs.len().min(14)).prop_flat_map(
                move |chosen| {
                    let k = chosen.len();
                    proptest::collection::vec(0.05f64..=1.0, k).prop_map(move |ps| {
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
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn width_two_is_lossless(g in small_graph()) {
            let index = build_fwd_index(&g, 2, false).unwrap();
            for s in 0..g.node_count() {
                for t in 0..g.node_count() {
                    let q = extract_query_graph(&index, s, t).unwrap();
                    prop_assert!(q.graph.node_count() <= g.node_count());
                    prop_assert!(q.graph.edge_count() <= g.edge_count());
                    let a = exact_reliability(&q.graph, q.source, q.target).unwrap();
                    let b = exact_reliability(&g, s, t).unwrap();
                    prop_assert!((a - b).abs() < 1e-12, "{} -> {}: {} vs {}", s, t, a, b);
                }
            }
        }
    }
}
