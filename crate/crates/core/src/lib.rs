//! Model predictive control with a terminal control-barrier-function
//! constraint (MPC-MCI), the baseline formulations it is compared against,
//! and the tooling to evaluate them: a bundled NLP solver, plant models,
//! feasibility sweeps, closed-loop tracking, and reachability probes.
//!
//! The usual flow is [`Plant`] + [`SafetySpec`] + [`FormulationParams`]
//! → [`build_problem`] → [`solve`].

pub mod ad;
pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod ocp;
pub mod safety;
pub mod solver;

pub use dynamics::{ControlBounds, ControlVector, Plant, PlantKind, StateConstraint, StateVector};
pub use error::{Error, Result};
pub use exec::Execution;
pub use ocp::{
    build_problem, extend_warm_start, shift_warm_start, CostSpec, FormulationParams, OcpProblem,
    Provenance, Reference, Variant, WarmStart,
};
pub use safety::{ObstacleSpec, SafetySpec};
pub use solver::{check_derivatives, feasibility_phase, solve, SolveResult, SolverConfig, Status};
