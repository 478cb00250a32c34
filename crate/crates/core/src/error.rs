use std::fmt;

/// Errors produced by graph ingestion, the estimators, the index builders
/// and the benchmark harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: probability {value} is outside (0, 1]")]
    ProbabilityOutOfRange { line: usize, value: f64 },

    #[error("line {line}: duplicate edge {source_label} -> {target_label}")]
    DuplicateEdge {
        line: usize,
        source_label: String,
        target_label: String,
    },

    #[error("line {line}: self-loop on node {label}")]
    SelfLoop { line: usize, label: String },

    #[error("invalid edge {source_node} -> {target_node}: {reason}")]
    InvalidEdge {
        source_node: usize,
        target_node: usize,
        reason: &'static str,
    },

    #[error("unknown node label {0:?}")]
    UnknownNode(String),

    #[error("node id {id} is out of range for a graph with {nodes} nodes")]
    NodeOutOfRange { id: usize, nodes: usize },

    #[error("exact enumeration needs m <= {limit} edges, graph has {edges}")]
    EdgeBudgetExceeded { edges: usize, limit: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index holds {width} worlds per edge but {requested} were requested")]
    IndexTooNarrow { requested: usize, width: usize },

    #[error("no expandable edge although the prefix group is undecided")]
    NoExpandableEdge,

    #[error("only {found} edges reachable from the source, {required} required")]
    InsufficientEdges { found: usize, required: usize },

    #[error("width {width} decompositions are lossy; pass the lossy flag to build one")]
    LossyWidth { width: usize },

    #[error("found only {found} valid sources for {requested} requested pairs")]
    Exhausted { found: usize, requested: usize },

    #[error("no convergence up to K = {last_k} (last rho = {rho})")]
    NonConvergent { last_k: usize, rho: f64 },

    #[error("baseline reliability is zero for pairs {}", PairList(.pairs))]
    ZeroBaseline { pairs: Vec<usize> },

    #[error("index file: {0}")]
    IndexFormat(String),

    #[error("index built for a graph with {index_nodes} nodes and {index_edges} edges, got {graph_nodes} and {graph_edges}")]
    IndexMismatch {
        index_nodes: usize,
        index_edges: usize,
        graph_nodes: usize,
        graph_edges: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

struct PairList<'a>(&'a [usize]);

impl fmt::Display for PairList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}
