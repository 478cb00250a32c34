use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::graph::{NodeId, UncertainGraph};
use crate::rng::RandomStream;

/// Output of one estimator run.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    /// Estimated reliability, in `[0, 1]`.
    pub value: f64,
    /// Sample budget `K` the run was given.
    pub samples_used: usize,
    /// Online estimation time.
    pub elapsed: Duration,
    /// Offline work done for this run (index build or refresh), timed
    /// separately from `elapsed`.
    pub setup: Duration,
    /// Seed of the stream the run drew from.
    pub seed: u64,
}

impl Estimate {
    pub(crate) fn new(value: f64, samples_used: usize, elapsed: Duration, seed: u64) -> Self {
        debug_assert!(
            (0.0..=1.0 + 1e-9).contains(&value),
            "estimate {value} out of range"
        );
        Estimate {
            value: value.clamp(0.0, 1.0),
            samples_used,
            elapsed,
            setup: Duration::ZERO,
            seed,
        }
    }
}

/// Common contract of every reliability estimator.
pub trait Estimator: Send + Sync {
    fn name(&self) -> String;

    fn estimate(
        &self,
        graph: &UncertainGraph,
        s: NodeId,
        t: NodeId,
        k: usize,
        rng: &mut RandomStream,
    ) -> Result<Estimate>;
}

impl<E: Estimator + ?Sized> Estimator for Box<E> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn estimate(
        &self,
        graph: &UncertainGraph,
        s: NodeId,
        t: NodeId,
        k: usize,
        rng: &mut RandomStream,
    ) -> Result<Estimate> {
        (**self).estimate(graph, s, t, k, rng)
    }
}

pub(crate) fn check_query(graph: &UncertainGraph, s: NodeId, t: NodeId, k: usize) -> Result<()> {
    graph.check_node(s)?;
    graph.check_node(t)?;
    if k == 0 {
        return Err(Error::InvalidParameter(
            "sample count K must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Estimator names as used on the command line and in report files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Mc,
    BfsSharing,
    Rhh,
    Rss,
    LpPlus,
    LpLegacy,
    ProbTree,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Mc,
        Method::BfsSharing,
        Method::Rhh,
        Method::Rss,
        Method::LpPlus,
        Method::LpLegacy,
        Method::ProbTree,
    ];

    /// The six methods of the comparison; the published lazy propagation
    /// variant is excluded.
    pub const COMPARED: [Method; 6] = [
        Method::Mc,
        Method::BfsSharing,
        Method::Rhh,
        Method::Rss,
        Method::LpPlus,
        Method::ProbTree,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::BfsSharing => "bfs-sharing",
            Method::Rhh => "rhh",
            Method::Rss => "rss",
            Method::LpPlus => "lp+",
            Method::LpLegacy => "lp-legacy",
            Method::ProbTree => "probtree",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown estimator {s:?}")))
    }
}
