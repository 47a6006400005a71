//! Simulation of contagion cascades over a hidden weighted directed network, and
//! reconstruction of that network from node infection times alone.
//!
//! The pipeline is split into independent modules:
//!
//! * [`graph`] holds the [`Network`] type, synthetic generators and the TSV format.
//! * [`diffusion`] simulates SI cascades under a [`TransmissionModel`].
//! * [`likelihood`] turns a cascade set into one convex subproblem per node.
//! * [`solver`] minimizes those subproblems and assembles the inferred network.
//! * [`eval`] scores an inferred network against ground truth.

pub mod diffusion;
pub mod error;
pub mod eval;
pub mod graph;
pub mod likelihood;
pub mod solver;

mod numfmt;

pub use diffusion::{Cascade, CascadeSet, GenerationReport, TransmissionModel};
pub use error::{Error, Result};
pub use eval::{EvalReport, PrPoint};
pub use graph::Network;
pub use likelihood::{NodeSubproblem, TransformedPoint};
pub use solver::{SolveReport, SolverOptions};
