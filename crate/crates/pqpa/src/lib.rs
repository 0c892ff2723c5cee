//! Probabilistic quantum process algebra for closed quantum systems.
//!
//! The crate provides a term language over sequential, alternative and
//! probabilistic composition plus the ACP-style parallel operators
//! (left merge, communication merge, merge with memory, entanglement
//! merge), a density-matrix backend for the quantum part of
//! configurations, a structured operational semantics that builds fully
//! probabilistic quantum graphs, strong and branching probabilistic
//! bisimulation checkers, an axiom-directed normalizer to basic-term
//! form, and executable models of the teleportation, BB84 and E91
//! protocols together with their external-behaviour checks.

pub mod bisim;
pub mod cmatrix;
pub mod parse;
pub mod prob;
pub mod protocols;
pub mod quantum;
pub mod registry;
pub mod rewrite;
pub mod sampling;
pub mod sos;
pub mod term;
pub use bisim::{branching_bisim, strong_bisim, BranchingResult, PartitionResult};
pub use rewrite::{normalize, RewriteTrace};
pub use sos::{build_graph, ConfigGraph, Configuration};
pub use quantum::{QState, Register, Visibility};
pub use registry::{ActionKind, ActionRegistry, QEffect};


pub use term::{ActionName, ProcessTerm};
