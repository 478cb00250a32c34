//! Uncertain graphs, possible worlds, and edge-list ingestion.
//!
//! An [`UncertainGraph`] is a directed graph whose edges exist independently
//! with their own probability. Nodes are renumbered densely `0..n` at
//! ingestion in order of first appearance; original labels are kept so that
//! results can be reported in the caller's vocabulary. Edge ids follow line
//! order in the input file, and every adjacency list is sorted by edge id.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub source: NodeId,
    pub target: NodeId,
    pub p: f64,
}

/// Directed graph with an independent existence probability per edge.
#[derive(Clone, Debug)]
pub struct UncertainGraph {
    labels: Vec<String>,
    index: HashMap<String, NodeId>,
    edges: Vec<Edge>,
    out_offsets: Vec<usize>,
    out_list: Vec<EdgeId>,
    in_offsets: Vec<usize>,
    in_list: Vec<EdgeId>,
}

impl UncertainGraph {
    /// Builds a graph over nodes `0..n` labelled by their decimal id.
    pub fn from_edges(n: usize, edges: Vec<Edge>) -> Result<Self> {
        let labels = (0..n).map(|v| v.to_string()).collect();
        Self::with_labels(labels, edges)
    }

    /// Builds a graph from `(source, target, p)` triples over `0..n`.
    pub fn from_triples(n: usize, triples: &[(NodeId, NodeId, f64)]) -> Result<Self> {
        let edges = triples
            .iter()
            .map(|&(source, target, p)| Edge { source, target, p })
            .collect();
        Self::from_edges(n, edges)
    }

    pub fn with_labels(labels: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        let n = labels.len();
        let mut seen = HashSet::with_capacity(edges.len());
        for e in &edges {
            let bad = |reason| Error::InvalidEdge {
                source_node: e.source,
                target_node: e.target,
                reason,
            };
            if e.source >= n || e.target >= n {
                return Err(bad("endpoint out of range"));
            }
            if e.source == e.target {
                return Err(bad("self-loop"));
            }
            if !(e.p > 0.0 && e.p <= 1.0) {
                return Err(bad("probability outside (0, 1]"));
            }
            if !seen.insert((e.source, e.target)) {
                return Err(bad("duplicate edge"));
            }
        }
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        let (out_offsets, out_list) = csr(n, &edges, |e| e.source);
        let (in_offsets, in_list) = csr(n, &edges, |e| e.target);
        Ok(UncertainGraph {
            labels,
            index,
            edges,
            out_offsets,
            out_list,
            in_offsets,
            in_list,
        })
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e]
    }

    /// Outgoing edge ids of `v`, ascending.
    pub fn out_edges(&self, v: NodeId) -> &[EdgeId] {
        &self.out_list[self.out_offsets[v]..self.out_offsets[v + 1]]
    }

    /// Incoming edge ids of `v`, ascending.
    pub fn in_edges(&self, v: NodeId) -> &[EdgeId] {
        &self.in_list[self.in_offsets[v]..self.in_offsets[v + 1]]
    }

    pub fn out_degree(&self, v: NodeId) -> usize {
        self.out_offsets[v + 1] - self.out_offsets[v]
    }

    pub fn label(&self, v: NodeId) -> &str {
        &self.labels[v]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn node_id(&self, label: &str) -> Result<NodeId> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownNode(label.to_string()))
    }

    pub fn check_node(&self, v: NodeId) -> Result<()> {
        if v < self.node_count() {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange {
                id: v,
                nodes: self.node_count(),
            })
        }
    }

    /// Same topology and labels with new per-edge probabilities.
    pub fn with_probabilities(&self, probs: &[f64]) -> Result<Self> {
        assert_eq!(probs.len(), self.edge_count());
        let edges = self
            .edges
            .iter()
            .zip(probs)
            .map(|(e, &p)| Edge { p, ..*e })
            .collect();
        Self::with_labels(self.labels.clone(), edges)
    }

    /// Edge-list text: one `source target p` line per edge in edge order,
    /// probabilities with 17 significant digits so that parsing the output
    /// reproduces every value bit for bit.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::with_capacity(self.edges.len() * 32);
        for e in &self.edges {
            let _ = writeln!(
                out,
                "{} {} {:.16e}",
                self.labels[e.source], self.labels[e.target], e.p
            );
        }
        out
    }

    /// Forward BFS hop distances from `s` on the deterministic skeleton
    /// (every edge treated as present). Unreached nodes get `usize::MAX`.
    pub fn hop_distances(&self, s: NodeId) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.node_count()];
        let mut queue = VecDeque::new();
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            for &e in self.out_edges(v) {
                let w = self.edges[e].target;
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

fn csr(n: usize, edges: &[Edge], key: impl Fn(&Edge) -> NodeId) -> (Vec<usize>, Vec<EdgeId>) {
    let mut offsets = vec![0usize; n + 1];
    for e in edges {
        offsets[key(e) + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let mut fill = offsets.clone();
    let mut list = vec![0; edges.len()];
    for (id, e) in edges.iter().enumerate() {
        let slot = &mut fill[key(e)];
        list[*slot] = id;
        *slot += 1;
    }
    (offsets, list)
}

/// Edge list whose third column is a raw weight (for instance a collaboration
/// count) still waiting for a [`ProbabilityModel`].
#[derive(Clone, Debug)]
pub struct WeightedEdgeList {
    pub labels: Vec<String>,
    pub edges: Vec<(NodeId, NodeId, f64)>,
}

struct RawLine<'a> {
    line: usize,
    source: &'a str,
    target: &'a str,
    value: f64,
}

fn raw_lines(text: &str) -> impl Iterator<Item = Result<RawLine<'_>>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            return None;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 3 {
            return Some(Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", fields.len()),
            }));
        }
        let value = match parse_decimal(fields[2]) {
            Some(v) => v,
            None => {
                return Some(Err(Error::Parse {
                    line,
                    message: format!("not a decimal number: {:?}", fields[2]),
                }))
            }
        };
        Some(Ok(RawLine {
            line,
            source: fields[0],
            target: fields[1],
            value,
        }))
    })
}

/// Accepts plain decimal notation with an optional exponent; rejects
/// `inf`, `nan` and hexadecimal forms.
fn parse_decimal(s: &str) -> Option<f64> {
    let ok = s
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'+' | b'-'));
    if !ok || !s.bytes().any(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok().filter(|v: &f64| v.is_finite())
}

struct Interner {
    labels: Vec<String>,
    index: HashMap<String, NodeId>,
}

impl Interner {
    fn new() -> Self {
        Interner {
            labels: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn id(&mut self, label: &str) -> NodeId {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }
}

type RawEdges = (Vec<String>, Vec<(NodeId, NodeId, f64)>);

fn collect_edges(text: &str, check: impl Fn(usize, f64) -> Result<()>) -> Result<RawEdges> {
    let mut names = Interner::new();
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    for raw in raw_lines(text) {
        let raw = raw?;
        if raw.source == raw.target {
            return Err(Error::SelfLoop {
                line: raw.line,
                label: raw.source.to_string(),
            });
        }
        check(raw.line, raw.value)?;
        let u = names.id(raw.source);
        let v = names.id(raw.target);
        if !seen.insert((u, v)) {
            return Err(Error::DuplicateEdge {
                line: raw.line,
                source_label: raw.source.to_string(),
                target_label: raw.target.to_string(),
            });
        }
        edges.push((u, v, raw.value));
    }
    Ok((names.labels, edges))
}

/// Parses `source target probability` lines; `#` starts a comment.
pub fn parse_edge_list(text: &str) -> Result<UncertainGraph> {
    let (labels, edges) = collect_edges(text, |line, value| {
        if value > 0.0 && value <= 1.0 {
            Ok(())
        } else {
            Err(Error::ProbabilityOutOfRange { line, value })
        }
    })?;
    let edges = edges
        .into_iter()
        .map(|(source, target, p)| Edge { source, target, p })
        .collect();
    UncertainGraph::with_labels(labels, edges)
}

/// Parses `source target weight` lines with strictly positive weights.
pub fn parse_weighted_edge_list(text: &str) -> Result<WeightedEdgeList> {
    let (labels, edges) = collect_edges(text, |line, value| {
        if value > 0.0 {
            Ok(())
        } else {
            Err(Error::Parse {
                line,
                message: format!("weight {value} must be positive"),
            })
        }
    })?;
    Ok(WeightedEdgeList { labels, edges })
}

pub fn read_graph(path: impl AsRef<Path>) -> Result<UncertainGraph> {
    parse_edge_list(&std::fs::read_to_string(path)?)
}

/// How edge probabilities are derived from the raw edge list.
#[derive(Clone, Debug, PartialEq)]
pub enum ProbabilityModel {
    /// `p(u -> v) = 1 / outdeg(u)`.
    InverseOutDegree,
    /// Each edge independently picks one of the values uniformly.
    UniformChoice(Vec<f64>),
    /// `p = 1 - exp(-w / mu)` for raw weight `w`.
    ExponentialCdf {
        mu: f64,
    },
    Fixed(f64),
}

impl ProbabilityModel {
    /// The value set used for uniformly chosen probabilities on the
    /// BioMine/DBLP style benchmarks.
    pub fn default_uniform_choice() -> Self {
        ProbabilityModel::UniformChoice(vec![0.1, 0.01, 0.001])
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |p: f64| p > 0.0 && p <= 1.0;
        match self {
            ProbabilityModel::InverseOutDegree => Ok(()),
            ProbabilityModel::UniformChoice(values) => {
                if values.is_empty() || !values.iter().all(|&p| in_range(p)) {
                    Err(Error::InvalidParameter(
                        "uniform-choice values must be non-empty and in (0, 1]".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            ProbabilityModel::ExponentialCdf { mu } => {
                if *mu > 0.0 && mu.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(
                        "exponential cdf needs mu > 0".into(),
                    ))
                }
            }
            ProbabilityModel::Fixed(p) => {
                if in_range(*p) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "fixed probability {p} not in (0, 1]"
                    )))
                }
            }
        }
    }
}

/// Replaces every edge weight by a probability drawn from `model`.
pub fn assign_probabilities(
    raw: &WeightedEdgeList,
    model: &ProbabilityModel,
    rng: &mut RandomStream,
) -> Result<UncertainGraph> {
    model.validate()?;
    let n = raw.labels.len();
    let mut out_degree = vec![0usize; n];
    for &(u, _, _) in &raw.edges {
        out_degree[u] += 1;
    }
    let mut edges = Vec::with_capacity(raw.edges.len());
    for &(source, target, weight) in &raw.edges {
        let p = match model {
            ProbabilityModel::InverseOutDegree => 1.0 / out_degree[source] as f64,
            ProbabilityModel::UniformChoice(values) => *values.choose(rng).expect("validated"),
            // -expm1 stays positive for tiny weights where 1 - exp underflows to 0
            ProbabilityModel::ExponentialCdf { mu } => -(-weight / mu).exp_m1(),
            ProbabilityModel::Fixed(p) => *p,
        };
        edges.push(Edge { source, target, p });
    }
    UncertainGraph::with_labels(raw.labels.clone(), edges)
}

/// One deterministic graph: `present[e]` says whether edge `e` exists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PossibleWorld {
    pub present: Vec<bool>,
}

impl PossibleWorld {
    /// World whose edge `e` is present iff bit `e` of `mask` is set.
    pub fn from_mask(mask: u64, edges: usize) -> Self {
        PossibleWorld {
            present: (0..edges).map(|e| mask >> e & 1 == 1).collect(),
        }
    }
}

pub fn sample_world<R: Rng + ?Sized>(graph: &UncertainGraph, rng: &mut R) -> PossibleWorld {
    PossibleWorld {
        present: graph.edges.iter().map(|e| bernoulli(rng, e.p)).collect(),
    }
}

#[inline]
pub(crate) fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    if p >= 1.0 {
        true
    } else if p <= 0.0 {
        false
    } else {
        rng.random::<f64>() < p
    }
}

/// Whether `t` is reachable from `s` using only edges present in `world`.
pub fn reachable(graph: &UncertainGraph, world: &PossibleWorld, s: NodeId, t: NodeId) -> bool {
    assert_eq!(world.present.len(), graph.edge_count(), "world mask length");
    if s == t {
        return true;
    }
    let mut seen = vec![false; graph.node_count()];
    let mut queue = VecDeque::new();
    seen[s] = true;
    queue.push_back(s);
    while let Some(v) = queue.pop_front() {
        for &e in graph.out_edges(v) {
            if !world.present[e] {
                continue;
            }
            let w = graph.edges[e].target;
            if w == t {
                return true;
            }
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    false
}
