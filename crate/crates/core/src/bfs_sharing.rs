//! Shared BFS over a bit-vector index of pre-sampled worlds.
//!
//! The offline index stores, for every edge, an `L`-bit vector whose bit `i`
//! says whether the edge exists in world `i`. A query walks the graph once,
//! keeping per node the set of worlds in which it is reached from `s`. When a
//! node that is already visited gains worlds, the change is pushed to its
//! visited successors until nothing changes any more; that propagation is
//! why a query cannot stop early and why its cost grows with the number of
//! worlds.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimate::{check_query, Estimate, Estimator};
use crate::graph::{bernoulli, EdgeId, NodeId, UncertainGraph};
use crate::rng::RandomStream;

/// Default number of worlds per edge.
pub const DEFAULT_WIDTH: usize = 1500;

const MAGIC: &[u8; 8] = b"STRBFS01";

fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// Mask that keeps the first `bits % 64` bits of the final word.
fn tail_mask(bits: usize) -> u64 {
    match bits % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// One `L`-bit vector per edge, packed into little-endian 64-bit words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeBitIndex {
    width: usize,
    words_per_edge: usize,
    bits: Vec<u64>,
}

impl EdgeBitIndex {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn edge_count(&self) -> usize {
        self.bits
            .len()
            .checked_div(self.words_per_edge)
            .unwrap_or(0)
    }

    /// Packed words of edge `e`.
    pub fn edge_words(&self, e: EdgeId) -> &[u64] {
        &self.bits[e * self.words_per_edge..(e + 1) * self.words_per_edge]
    }

    /// Whether edge `e` exists in world `world`.
    pub fn bit(&self, e: EdgeId, world: usize) -> bool {
        self.edge_words(e)[world / 64] >> (world % 64) & 1 == 1
    }

    pub fn popcount(&self, e: EdgeId) -> usize {
        self.edge_words(e)
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    /// Index with explicitly given vectors; `rows[e][i]` is edge `e` in world `i`.
    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidParameter(
                "rows must share a positive width".into(),
            ));
        }
        let words_per_edge = words_for(width);
        let mut bits = vec![0u64; rows.len() * words_per_edge];
        for (e, row) in rows.iter().enumerate() {
            for (i, &b) in row.iter().enumerate() {
                if b {
                    bits[e * words_per_edge + i / 64] |= 1 << (i % 64);
                }
            }
        }
        Ok(EdgeBitIndex {
            width,
            words_per_edge,
            bits,
        })
    }

    fn fill<R: Rng + ?Sized>(&mut self, graph: &UncertainGraph, rng: &mut R) {
        let wpe = self.words_per_edge;
        for (e, edge) in graph.edges().iter().enumerate() {
            let row = &mut self.bits[e * wpe..(e + 1) * wpe];
            if edge.p >= 1.0 {
                row.iter_mut().for_each(|w| *w = u64::MAX);
                row[wpe - 1] &= tail_mask(self.width);
                continue;
            }
            row.iter_mut().for_each(|w| *w = 0);
            for i in 0..self.width {
                if bernoulli(rng, edge.p) {
                    row[i / 64] |= 1 << (i % 64);
                }
            }
        }
    }

    /// Size of the serialized index in bytes.
    pub fn serialized_len(&self) -> usize {
        MAGIC.len() + 16 + self.bits.len() * 8
    }

    /// Layout: magic, `L` and `m` as u64 LE, then `m` rows of
    /// `ceil(L / 64)` u64 LE words in edge order.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.width as u64).to_le_bytes())?;
        out.write_all(&(self.edge_count() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.bits.len() * 8);
        for w in &self.bits {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::IndexFormat("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::IndexFormat("not a BFS-sharing index".into()));
        }
        let mut word = [0u8; 8];
        let mut read_u64 = |input: &mut R| -> Result<u64> {
            input
                .read_exact(&mut word)
                .map_err(|_| Error::IndexFormat("truncated index".into()))?;
            Ok(u64::from_le_bytes(word))
        };
        let width = read_u64(&mut input)? as usize;
        let m = read_u64(&mut input)? as usize;
        if width == 0 {
            return Err(Error::IndexFormat("zero width".into()));
        }
        let words_per_edge = words_for(width);
        let total = m
            .checked_mul(words_per_edge)
            .ok_or_else(|| Error::IndexFormat("size overflow".into()))?;
        let mut bits = Vec::with_capacity(total);
        for _ in 0..total {
            bits.push(read_u64(&mut input)?);
        }
        let index = EdgeBitIndex {
            width,
            words_per_edge,
            bits,
        };
        let mask = !tail_mask(width);
        if (0..m).any(|e| index.edge_words(e)[words_per_edge - 1] & mask != 0) {
            return Err(Error::IndexFormat("bits set beyond the index width".into()));
        }
        Ok(index)
    }
}

/// Samples `width` worlds: each bit is drawn independently with the edge's
/// probability.
pub fn build_index(
    graph: &UncertainGraph,
    width: usize,
    rng: &mut RandomStream,
) -> Result<EdgeBitIndex> {
    if width == 0 {
        return Err(Error::InvalidParameter(
            "index width must be at least 1".into(),
        ));
    }
    let words_per_edge = words_for(width);
    let mut index = EdgeBitIndex {
        width,
        words_per_edge,
        bits: vec![0; graph.edge_count() * words_per_edge],
    };
    index.fill(graph, rng);
    Ok(index)
}

/// Redraws every bit in place, keeping the width. Queries must not overlap a
/// refresh; `&mut` enforces that.
pub fn refresh_index(
    index: &mut EdgeBitIndex,
    graph: &UncertainGraph,
    rng: &mut RandomStream,
) -> Result<()> {
    check_index(index, graph)?;
    index.fill(graph, rng);
    Ok(())
}

fn check_index(index: &EdgeBitIndex, graph: &UncertainGraph) -> Result<()> {
    if index.edge_count() != graph.edge_count() {
        return Err(Error::IndexMismatch {
            index_nodes: graph.node_count(),
            index_edges: index.edge_count(),
            graph_nodes: graph.node_count(),
            graph_edges: graph.edge_count(),
        });
    }
    Ok(())
}

/// Per-query state: the worlds in which each visited node is reached.
#[derive(Clone, Debug)]
pub struct NodeStateVectors {
    words: usize,
    vectors: Vec<u64>,
    visited: Vec<bool>,
    queue: VecDeque<NodeId>,
}

impl NodeStateVectors {
    /// Fresh state over the first `k` worlds with only `s` visited.
    pub fn new(graph: &UncertainGraph, s: NodeId, k: usize) -> Self {
        let words = words_for(k);
        let mut state = NodeStateVectors {
            words,
            vectors: vec![0; graph.node_count() * words],
            visited: vec![false; graph.node_count()],
            queue: VecDeque::new(),
        };
        state.visited[s] = true;
        let row = state.row_mut(s);
        row.iter_mut().for_each(|w| *w = u64::MAX);
        row[words - 1] &= tail_mask(k);
        state
    }

    pub fn is_visited(&self, v: NodeId) -> bool {
        self.visited[v]
    }

    /// Worlds in which `v` is reached, as packed words.
    pub fn vector(&self, v: NodeId) -> &[u64] {
        &self.vectors[v * self.words..(v + 1) * self.words]
    }

    fn row_mut(&mut self, v: NodeId) -> &mut [u64] {
        &mut self.vectors[v * self.words..(v + 1) * self.words]
    }

    pub fn popcount(&self, v: NodeId) -> usize {
        self.vector(v).iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Total number of set bits across all node vectors.
    pub fn total_ones(&self) -> usize {
        self.vectors.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// `I_to |= I_from & bits(e)` for edge `e = from -> to`; true if `I_to` changed.
    fn absorb(&mut self, graph: &UncertainGraph, index: &EdgeBitIndex, e: EdgeId) -> bool {
        let edge = graph.edge(e);
        let (from, to) = (edge.source, edge.target);
        let bits = index.edge_words(e);
        let mut changed = false;
        for (i, &word) in bits[..self.words].iter().enumerate() {
            let incoming = self.vectors[from * self.words + i] & word;
            let slot = &mut self.vectors[to * self.words + i];
            let merged = *slot | incoming;
            changed |= merged != *slot;
            *slot = merged;
        }
        changed
    }

    /// Pushes the worlds of `v` along edge `e = v -> u` into the already
    /// visited `u`, then propagates every change through visited successors
    /// until no vector changes. Returns the number of vectors that changed.
    pub fn cascade_update(
        &mut self,
        graph: &UncertainGraph,
        index: &EdgeBitIndex,
        e: EdgeId,
    ) -> usize {
        let u = graph.edge(e).target;
        debug_assert!(self.visited[u], "cascade target must be visited");
        if !self.absorb(graph, index, e) {
            return 0;
        }
        let mut changes = 1;
        self.queue.clear();
        self.queue.push_back(u);
        while let Some(w) = self.queue.pop_front() {
            for &out in graph.out_edges(w) {
                let x = graph.edge(out).target;
                if self.visited[x] && self.absorb(graph, index, out) {
                    changes += 1;
                    self.queue.push_back(x);
                }
            }
        }
        changes
    }
}

/// Worklist BFS over the first `k` worlds of `index`; returns the set of
/// worlds in which `t` is reached. No early termination.
pub fn query_state(
    index: &EdgeBitIndex,
    graph: &UncertainGraph,
    s: NodeId,
    k: usize,
) -> Result<NodeStateVectors> {
    check_index(index, graph)?;
    graph.check_node(s)?;
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    if k > index.width() {
        return Err(Error::IndexTooNarrow {
            requested: k,
            width: index.width(),
        });
    }
    let mut state = NodeStateVectors::new(graph, s, k);
    let mut worklist: VecDeque<NodeId> = graph
        .out_edges(s)
        .iter()
        .map(|&e| graph.edge(e).target)
        .collect();
    while let Some(v) = worklist.pop_front() {
        if state.visited[v] {
            continue;
        }
        state.visited[v] = true;
        for &e in graph.in_edges(v) {
            if state.visited[graph.edge(e).source] {
                state.absorb(graph, index, e);
            }
        }
        for &e in graph.out_edges(v) {
            let out = graph.edge(e).target;
            if state.visited[out] {
                state.cascade_update(graph, index, e);
            } else {
                worklist.push_back(out);
            }
        }
    }
    Ok(state)
}

pub fn query(
    index: &EdgeBitIndex,
    graph: &UncertainGraph,
    s: NodeId,
    t: NodeId,
    k: usize,
) -> Result<Estimate> {
    check_query(graph, s, t, k)?;
    let start = Instant::now();
    let state = query_state(index, graph, s, k)?;
    let value = state.popcount(t) as f64 / k as f64;
    Ok(Estimate::new(value, k, start.elapsed(), 0))
}

/// BFS sharing as a per-query estimator: every call draws a fresh index so
/// repeated queries stay independent. The draw is reported as `setup` time.
#[derive(Clone, Copy, Debug, Default)]
pub struct BfsSharing {
    /// Index width; `None` sizes the index to the requested `K`.
    pub width: Option<usize>,
}

impl Estimator for BfsSharing {
    fn name(&self) -> String {
        "bfs-sharing".into()
    }

    fn estimate(
        &self,
        graph: &UncertainGraph,
        s: NodeId,
        t: NodeId,
        k: usize,
        rng: &mut RandomStream,
    ) -> Result<Estimate> {
        check_query(graph, s, t, k)?;
        let width = self.width.unwrap_or(k);
        let start = Instant::now();
        let index = build_index(graph, width, rng)?;
        let setup = start.elapsed();
        let mut est = query(&index, graph, s, t, k)?;
        est.setup = setup;
        est.seed = rng.seed();
        Ok(est)
    }
}
