//! Distributed stochastic generalized Nash equilibrium seeking over
//! communication graphs.
//!
//! Players hold local decisions, estimates of everyone else's decisions, and
//! resource multipliers; edge arbitrators hold consensus multipliers. Each
//! outer iteration runs two distributed resolvent evaluations — an augmented
//! best response solved inexactly by projected stochastic subgradient steps,
//! and a projection step — inside an averaged fixed-point update. The
//! `games` module ships a quadratic oracle game, a stochastic
//! production-and-distribution market, and a two-stage assembly game; the
//! `reference` module computes centralized ground truth for the metrics.
//!
//! The `book/` directory of the repository walks through the concepts; its
//! code snippets compile and run as doc-tests of this crate.

pub mod game;
pub mod games;
pub mod graph;
pub mod lp;
pub mod metrics;
pub mod operators;
pub mod reference;
pub mod sets;
pub mod solver;

pub use game::{sample_subgradient, AugmentedSubproblem, Game, GameError, GameOracle};
pub use graph::{kron_apply, CommGraph, GraphError, TransportNetwork};
pub use operators::{
    assumption6_step_sizes, consensus_stack_from_kkt, extended_pseudogradient, monotonicity_probe,
    operator_t_residual, splitting_fixed_point, Dims, GradientMode, OperatorError, PhiOperator, SelectionMap,
    SplittingConfig, StackState,
};
pub use reference::{kkt_residual, solve_vi_extragradient, ExtragradientOptions, ReferenceSolution};
pub use sets::{project_box, BoxBounds, Halfspace, LocalSet, SetError};
pub use solver::{
    inner_solve, inner_solve_exact, km_update, run, EarlyStop, GammaSchedule, InnerMode, InnerSchedule,
    IterationSnapshot, MetricsSink, NullSink, RunOptions, RunOutcome, RunRecord, Schedules, SolverEngine,
    SolverError, VecSink,
};

// The guide's chapters double as doc-tests so the book can never drift from
// the crate's actual interfaces.
#[doc = include_str!("../../../book/src/graphs.md")]
mod _book_graphs {}
#[doc = include_str!("../../../book/src/games.md")]
mod _book_games {}
#[doc = include_str!("../../../book/src/splitting.md")]
mod _book_splitting {}
#[doc = include_str!("../../../book/src/algorithm.md")]
mod _book_algorithm {}
#[doc = include_str!("../../../book/src/reference.md")]
mod _book_reference {}
