//! Robust MDP solving with optimal-robust best-effort (ORBE) policy refinement.
//!
//! The crate covers s-rectangular robust MDPs with interval or polytopic
//! uncertainty: robust value iteration, the rational form of the value at a
//! single state as a function of that state's transitions, the staged ORBE
//! refinement, gridworld benchmark generators, and brute-force oracles.

pub mod benchmarks;
pub mod error;
pub mod experiment;
pub mod model;
pub mod oracle;
pub mod orbe;
pub mod polytope;
pub mod rational;
pub mod solver;

pub use error::{Error, Result};
pub use model::{
    evaluate_policy_exact, interval_to_polytope, load_model, load_policy, save_model, save_policy,
    save_values, Extremum, IncompleteTransition, IntervalSet, ModelMeta, Policy, PolytopeSet, Rmdp,
    RmdpParts, Sense, StateTransition, TransitionFunction, UncertaintySet, ValueFunction,
};
pub use orbe::{compute_orbe, CandidateSet, OrbeConfig, OrbeReport, Stage};
pub use solver::{robust_value_iteration, RobustSolution, SolverConfig};
