//! Solvers for stationary and Markov mean-field equilibria of multi-population
//! discrete-time mean-field games on finite state and action spaces.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds populations, weights, measures and the coupled reward and
//!   transition evaluators, plus assumption checks.
//! * [`mdp`] is the frozen single-population decision problem obtained by fixing
//!   the global state-action measure.
//! * [`dp`] is dynamic programming on frozen problems: Bellman operator, value
//!   iteration, greedy selection, policy evaluation and backward induction.
//! * [`population`] lifts policies to measures, aggregates transitions and
//!   computes invariant measures.
//! * [`total`] covers the total-payoff criterion: the absorbing-state
//!   modification, the taboo weight and the reduction to a discounted problem.
//! * [`equilibrium`] runs the damped best-response solvers and verifies
//!   candidate equilibria.

// `!(x >= 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dp;
pub mod equilibrium;
pub mod error;
pub mod fixtures;
mod linalg;
pub mod mdp;
pub mod model;
pub mod population;
pub mod total;

pub use dp::{MarkovPolicyFlow, StationaryPolicy, ValueFlow, ValueFunction};
pub use equilibrium::{
    Criterion, Damping, EquilibriumResult, FlowResult, SolverOptions, TailMode,
};
pub use error::{Error, Result};
pub use mdp::Mdp;
pub use model::{
    GameModel, GlobalState, PopulationSpec, StateActionMeasure, TabularCoupling,
    ValidationReport, WeightFunction,
};
