//! s-t reliability estimation over uncertain graphs.
//!
//! An uncertain graph is a directed graph whose edges exist independently
//! with given probabilities; the s-t reliability is the probability that `t`
//! is reachable from `s`. The estimators here all implement [`Estimator`]:
//!
//! ```
//! use st_reliability::mc::Mc;
//! use st_reliability::oracle::exact_reliability;
//! use st_reliability::{Estimator, RandomStream, UncertainGraph};
//!
//! let g = UncertainGraph::from_triples(3, &[(0, 1, 0.8), (1, 2, 0.5), (0, 2, 0.1)])?;
//! let exact = exact_reliability(&g, 0, 2)?;
//! let est = Mc.estimate(&g, 0, 2, 10_000, &mut RandomStream::new(1))?;
//! assert!((est.value - exact).abs() < 0.03);
//! # Ok::<(), st_reliability::Error>(())
//! ```
//!
//! The guide in `book/` explains each estimator; its listings run as tests.

pub mod bench;
pub mod bfs_sharing;
pub mod error;
pub mod estimate;
pub mod graph;
pub mod lazy;
pub mod mc;
pub mod oracle;
pub mod probtree;
pub mod rhh;
pub mod rng;
pub mod rss;

pub use error::{Error, Result};
pub use estimate::{Estimate, Estimator, Method};
pub use graph::{EdgeId, NodeId, PossibleWorld, UncertainGraph};
pub use rng::RandomStream;
