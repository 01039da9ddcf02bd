//! Two-step double-integrator example contrasting a terminal-only CBF with a
//! CBF imposed on the last two predicted states.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlTrajectory, ControlVector, Plant, DOUBLE_INTEGRATOR};
use crate::error::Result;
use crate::ocp::{build_problem, CostSpec, FormulationParams, OcpProblem, Variant, WarmStart};
use crate::safety::{SafetyKind, SafetySpec};
use crate::solver::{solve, violation, SolverConfig, Status};

use super::grid::Verdict;

pub const X0: [f64; 2] = [0.1, -0.7];
/// Push-then-coast witness for the terminal-CBF problem.
pub const WITNESS: [f64; 2] = [1.5, 0.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixSide {
    pub verdict: Verdict,
    pub status: Status,
    pub max_violation: f64,
    /// Solver's first control when a feasible point was found.
    pub u0: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixCase {
    /// Speed bound `|v| <= limit` on predicted states, if imposed.
    pub speed_limit: Option<f64>,
    pub mci: AppendixSide,
    pub dtcbf: AppendixSide,
    /// Violation of the witness against the terminal-CBF problem.
    pub witness_violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixReport {
    pub witness_controls: [f64; 2],
    /// `(x, v)` after each witness control.
    pub witness_states: [[f64; 2]; 2],
    pub witness_distance: f64,
    pub witness_barrier: f64,
    /// Smallest `u_0 / 2` meeting the barrier at `x_1`.
    pub required_half_u0: f64,
    pub u_max: f64,
    /// Best reachable `x_1` minus the barrier offset (negative: shortfall).
    pub x1_margin: f64,
    pub without_speed_limit: AppendixCase,
    pub with_speed_limit: AppendixCase,
}

fn side(problem: &OcpProblem, cfg: &SolverConfig) -> Result<AppendixSide> {
    let res = solve(problem, &WarmStart::zeros(problem).values, cfg)?;
    let feasible = res.status.is_feasible();
    Ok(AppendixSide {
        verdict: if feasible {
            Verdict::Feasible
        } else if res.status == Status::NumericalFailure {
            Verdict::NumericalFailure
        } else {
            Verdict::Infeasible
        },
        status: res.status,
        max_violation: res.max_violation,
        u0: feasible.then(|| problem.controls(&res.primal)[0][0]),
    })
}

fn case(plant: &Plant, cfg: &SolverConfig) -> Result<AppendixCase> {
    let safety = SafetySpec::for_plant(plant);
    let build = |v| build_problem(plant, &safety, &CostSpec::default(), &FormulationParams::new(v, 2), &X0, 0.0);
    let mci = build(Variant::MpcMci)?;
    let dtcbf = build(Variant::DtcbfMpc)?;
    let witness = WarmStart::rollout(
        &mci,
        &[ControlVector::from(&WITNESS[..1]), ControlVector::from(&WITNESS[1..])],
    );
    Ok(AppendixCase {
        speed_limit: plant.state_constraints.first().map(|c| c.upper),
        witness_violation: violation(&mci, &witness.values),
        mci: side(&mci, cfg)?,
        dtcbf: side(&dtcbf, cfg)?,
    })
}

/// Runs the example with and without the speed bound `|v| <= u_max / 2`.
/// The witness `u = (1.5, 0)` reaches `v_1 = 0.8`, so it only certifies the
/// unbounded variant; the bounded one is decided by the solver.
pub fn appendix_example(cfg: &SolverConfig) -> Result<AppendixReport> {
    let plant = Plant::by_name(DOUBLE_INTEGRATOR)?;
    let safety = SafetySpec::for_plant(&plant);
    let u_max = plant.bounds.upper[0];
    let traj = ControlTrajectory(WITNESS.iter().map(|u| ControlVector::from(&[*u][..])).collect());
    let states = plant.simulate(&X0, &traj)?;
    let margin = match safety.kind {
        SafetyKind::HalfLine { margin } => margin,
        SafetyKind::Disk(_) => unreachable!("double integrator uses a half-line"),
    };
    // x_1 = x_0 + v_0 dt + u_0 dt^2 / 2 >= margin
    let dt = plant.dt;
    let required_u0 = (margin - X0[0] - X0[1] * dt) / (0.5 * dt * dt);
    let best_x1 = X0[0] + X0[1] * dt + 0.5 * u_max * dt * dt;
    let bounded = plant.clone().with_speed_limit(0.5 * u_max);
    Ok(AppendixReport {
        witness_controls: WITNESS,
        witness_states: [[states[1][0], states[1][1]], [states[2][0], states[2][1]]],
        witness_distance: safety.distance(&states[1]),
        witness_barrier: safety.barrier(&states[2]),
        required_half_u0: 0.5 * required_u0,
        u_max,
        x1_margin: best_x1 - margin,
        without_speed_limit: case(&plant, cfg)?,
        with_speed_limit: case(&bounded, cfg)?,
    })
}
