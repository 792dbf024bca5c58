//! Block-structured solvers for generalized monotone variational
//! inequalities (GMVIs).
//!
//! The problem class: find `u*` such that for all `u`,
//! `<F(u), u - u*> + g(u) - g(u*) >= 0`, where `F` is monotone and `g` is a
//! block-separable, prox-friendly convex regularizer. The centerpiece is a
//! cyclic block-coordinate solver with cycle-delayed operator information and
//! parameter-free adaptive step sizes ([`aduca`]), plus two reference
//! methods ([`baselines`]), progress metrics and trace emission
//! ([`metrics`], [`trace`]), and LibSVM ingestion with the saddle-point SVM
//! construction ([`data`]).
//!
//! A guided tour with runnable examples lives in `book/`; its snippets are
//! compiled and executed as part of `cargo test --doc`.

pub mod aduca;
pub mod baselines;
pub mod block;
pub mod data;
pub mod error;
pub mod metrics;
pub mod problem;
pub mod trace;

pub use block::{BlockPartition, BlockVector, DiagonalScaling};
pub use error::{Error, Result};
pub use problem::{BlockFn, GmviProblem};

// Compile and run every code block in the book as a doctest, so the guide
// cannot drift from the crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/adaptive-steps.md")]
    mod adaptive_steps {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/benchmarking.md")]
    mod benchmarking {}
}
