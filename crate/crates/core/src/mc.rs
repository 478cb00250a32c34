//! Hit-and-miss Monte Carlo with on-demand edge sampling.
//!
//! Each round runs a BFS from `s` and flips an edge's coin only when the BFS
//! reaches its source, stopping as soon as `t` is seen. Every round draws from
//! its own generator seeded by the caller's stream, so a round's outcome
//! depends only on that seed and not on how much randomness earlier rounds
//! consumed.

use std::collections::VecDeque;
use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimate::{check_query, Estimate, Estimator};
use crate::graph::{bernoulli, EdgeId, NodeId, UncertainGraph};
use crate::rng::{round_rng, RandomStream};

#[derive(Clone, Copy, Debug)]
pub struct McOptions {
    /// Stop a round as soon as `t` is visited.
    pub early_stop: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { early_stop: true }
    }
}

/// Generation-stamped visited set plus BFS queue, reused across rounds.
#[derive(Debug)]
pub(crate) struct Scratch {
    stamp: Vec<u32>,
    generation: u32,
    pub(crate) queue: VecDeque<NodeId>,
}

impl Scratch {
    pub(crate) fn new(n: usize) -> Self {
        Scratch {
            stamp: vec![0; n],
            generation: 0,
            queue: VecDeque::new(),
        }
    }

    pub(crate) fn next_round(&mut self) {
        self.queue.clear();
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
    }

    #[inline]
    pub(crate) fn visit(&mut self, v: NodeId) -> bool {
        if self.stamp[v] == self.generation {
            false
        } else {
            self.stamp[v] = self.generation;
            true
        }
    }

    #[inline]
    pub(crate) fn visited(&self, v: NodeId) -> bool {
        self.stamp[v] == self.generation
    }
}

/// One sampling round; `prob(e)` gives the edge's effective probability
/// (conditioned estimators pin some edges to 0 or 1).
pub(crate) fn sample_round<R: Rng + ?Sized>(
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    prob: &impl Fn(EdgeId) -> f64,
    early_stop: bool,
    scratch: &mut Scratch,
    rng: &mut R,
) -> bool {
    if s == t {
        return true;
    }
    scratch.next_round();
    scratch.visit(s);
    scratch.queue.push_back(s);
    let mut hit = false;
    while let Some(v) = scratch.queue.pop_front() {
        for &e in graph.out_edges(v) {
            // each node is dequeued once per round, so each edge is drawn at most once
            if !bernoulli(rng, prob(e)) {
                continue;
            }
            let w = graph.edge(e).target;
            if scratch.visit(w) {
                scratch.queue.push_back(w);
                if w == t {
                    hit = true;
                    if early_stop {
                        return true;
                    }
                }
            }
        }
    }
    hit
}

/// Number of rounds out of `k` in which `t` was reached.
pub(crate) fn count_hits(
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
    prob: &impl Fn(EdgeId) -> f64,
    early_stop: bool,
    rng: &mut RandomStream,
) -> usize {
    if s == t {
        return k;
    }
    let mut scratch = Scratch::new(graph.node_count());
    (0..k)
        .filter(|_| {
            let mut round = round_rng(rng);
            sample_round(graph, s, t, prob, early_stop, &mut scratch, &mut round)
        })
        .count()
}

pub fn mc_estimate(
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
    rng: &mut RandomStream,
) -> Result<Estimate> {
    mc_estimate_with(graph, s, t, k, McOptions::default(), rng)
}

pub fn mc_estimate_with(
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
    options: McOptions,
    rng: &mut RandomStream,
) -> Result<Estimate> {
    check_query(graph, s, t, k)?;
    let start = Instant::now();
    let hits = count_hits(
        graph,
        s,
        t,
        k,
        &|e| graph.edge(e).p,
        options.early_stop,
        rng,
    );
    Ok(Estimate::new(
        hits as f64 / k as f64,
        k,
        start.elapsed(),
        rng.seed(),
    ))
}

/// Binomial variance of the hit-and-miss estimator, `r (1 - r) / K`.
pub fn mc_variance(r_hat: f64, k: usize) -> f64 {
    assert!(k >= 1, "K must be positive");
    r_hat * (1.0 - r_hat) / k as f64
}

/// Samples sufficient for `Pr(|R_hat - R| >= epsilon R) <= lambda`:
/// `ceil(3 / (epsilon^2 r) * ln(2 / lambda))`.
pub fn chernoff_sample_bound(epsilon: f64, lambda: f64, r: f64) -> Result<usize> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParameter("lambda must lie in (0, 1)".into()));
    }
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidParameter(
            "reliability must lie in (0, 1]".into(),
        ));
    }
    Ok((3.0 / (epsilon * epsilon * r) * (2.0 / lambda).ln()).ceil() as usize)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Mc;

impl Estimator for Mc {
    fn name(&self) -> String {
        "mc".into()
    }

    fn estimate(
        &self,
        graph: &UncertainGraph,
        s: NodeId,
        t: NodeId,
        k: usize,
        rng: &mut RandomStream,
    ) -> Result<Estimate> {
        mc_estimate(graph, s, t, k, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::exact_reliability;

    #[test]
    fn same_node_is_certain() {
        let g = UncertainGraph::from_triples(2, &[(0, 1, 0.2)]).unwrap();
        for k in [1, 7, 100] {
            assert_eq!(
                mc_estimate(&g, 1, 1, k, &mut RandomStream::new(3))
                    .unwrap()
                    .value,
                1.0
            );
        }
    }

    #[test]
    fn certain_edge() {
        let g = UncertainGraph::from_triples(2, &[(0, 1, 1.0)]).unwrap();
        let est = mc_estimate(&g, 0, 1, 100, &mut RandomStream::new(3)).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.samples_used, 100);
        assert_eq!(est.seed, 3);
    }

    #[test]
    fn fair_coin_edge_within_three_sigma() {
        let g = UncertainGraph::from_triples(2, &[(0, 1, 0.5)]).unwrap();
        let est = mc_estimate(&g, 0, 1, 10_000, &mut RandomStream::new(21)).unwrap();
        assert!((est.value - 0.5).abs() <= 0.015, "{}", est.value);
    }

    #[test]
    fn rejects_zero_samples_and_bad_nodes() {
        let g = UncertainGraph::from_triples(2, &[(0, 1, 0.5)]).unwrap();
        assert!(mc_estimate(&g, 0, 1, 0, &mut RandomStream::new(0)).is_err());
        assert!(mc_estimate(&g, 0, 5, 10, &mut RandomStream::new(0)).is_err());
    }

    #[test]
    fn variance_formula() {
        assert_eq!(mc_variance(0.5, 1000), 0.00025);
        assert_eq!(mc_variance(0.0, 10), 0.0);
        assert_eq!(mc_variance(1.0, 10), 0.0);
    }

    #[test]
    fn chernoff_bound_values() {
        // 3 / (0.01 * 0.5) * ln(200) = 600 ln 200 = 3178.99...
        assert_eq!(chernoff_sample_bound(0.1, 0.01, 0.5).unwrap(), 3179);
        // 300 ln 40 = 1106.66...
        assert_eq!(chernoff_sample_bound(0.1, 0.05, 1.0).unwrap(), 1107);
        let near_one = 1.0 - 1e-12;
        let r = 0.25;
        let expected = (3.0 * (2.0f64 / near_one).ln() / r).ceil() as usize;
        assert_eq!(chernoff_sample_bound(1.0, near_one, r).unwrap(), expected);
        assert_eq!(expected, 9);
        assert!(chernoff_sample_bound(0.1, 0.01, 0.0).is_err());
        assert!(chernoff_sample_bound(0.0, 0.01, 0.5).is_err());
        assert!(chernoff_sample_bound(0.1, 1.0, 0.5).is_err());
    }

    #[test]
    fn early_stop_does_not_change_round_outcomes() {
        let g = UncertainGraph::from_triples(
            6,
            &[
                (0, 1, 0.6),
                (0, 2, 0.4),
                (1, 3, 0.5),
                (2, 3, 0.7),
                (3, 4, 0.5),
                (1, 5, 0.9),
                (5, 4, 0.3),
            ],
        )
        .unwrap();
        for seed in 0..20 {
            let with = mc_estimate_with(
                &g,
                0,
                3,
                500,
                McOptions { early_stop: true },
                &mut RandomStream::new(seed),
            )
            .unwrap();
            let without = mc_estimate_with(
                &g,
                0,
                3,
                500,
                McOptions { early_stop: false },
                &mut RandomStream::new(seed),
            )
            .unwrap();
            assert_eq!(with.value, without.value);
        }
    }

    #[test]
    fn unbiased_on_a_small_graph() {
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
        let exact = exact_reliability(&g, 0, 4).unwrap();
        let (runs, k) = (200usize, 500usize);
        let root = RandomStream::new(99);
        let values: Vec<f64> = (0..runs)
            .map(|i| {
                mc_estimate(&g, 0, 4, k, &mut root.split(i as u64))
                    .unwrap()
                    .value
            })
            .collect();
        let mean = values.iter().sum::<f64>() / runs as f64;
        let tol = 4.0 * (exact * (1.0 - exact) / (runs * k) as f64).sqrt();
        assert!((mean - exact).abs() <= tol, "mean {mean} exact {exact}");

        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        let expected = mc_variance(exact, k);
        assert!(
            var / expected < 1.5 && expected / var < 1.5,
            "{var} vs {expected}"
        );
    }
}
