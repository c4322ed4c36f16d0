//! Random greedy maximal sum-free subsets of `Z_m`.
//!
//! The process starts from the empty set, repeatedly picks a uniformly random
//! element that can still be added without creating a solution of `a + b = c`,
//! and stops when no such element remains. This crate provides:
//!
//! * [`ring`]: the modular equation-class layer (`a + b = c` up to swapping
//!   `a` and `b`) that everything else is built on,
//! * [`engine`]: the process itself, with an exact incremental ledger of the
//!   tracked degree and edge counts (full mode) or a lean status-only mode,
//! * [`trajectory`]: deterministic trajectory predictions, envelope functions
//!   and the variation inequalities that certify them,
//! * [`oracle`]: independent from-scratch recomputation, an exact expectation
//!   tree for tiny moduli, and small numeric lemma checkers,
//! * [`generic`]: a generic hypergraph greedy engine plus degree/codegree
//!   inspectors and builders for the Schur and k-AP hypergraphs,
//! * [`harness`]: the experiment layer behind the `sumfree` command line tool.

pub mod engine;
pub mod generic;
pub mod harness;
pub mod oracle;
pub mod ring;
pub mod rng;
pub mod trajectory;
