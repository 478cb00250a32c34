//! The code listings of the guide in `book/src`, compiled and run as
//! doctests. One module per chapter so a failure points at its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/uncertain-graphs.md")]
pub mod uncertain_graphs {}
#[doc = include_str!("../../../book/src/monte-carlo.md")]
pub mod monte_carlo {}
#[doc = include_str!("../../../book/src/bfs-sharing.md")]
pub mod bfs_sharing {}
#[doc = include_str!("../../../book/src/recursive-sampling.md")]
pub mod recursive_sampling {}
#[doc = include_str!("../../../book/src/lazy-propagation.md")]
pub mod lazy_propagation {}
#[doc = include_str!("../../../book/src/probtree.md")]
pub mod probtree {}
#[doc = include_str!("../../../book/src/benchmarking.md")]
pub mod benchmarking {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
