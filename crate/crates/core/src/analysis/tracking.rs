//! Receding-horizon closed loop tracking a moving reference.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::Plant;
use crate::error::{check_dim, Error, Result};
use crate::ocp::{build_problem, shift_warm_start, CostSpec, FormulationParams, OcpProblem, Reference, Variant, WarmStart};
use crate::safety::SafetySpec;
use crate::solver::{solve, violation, SolverConfig, Status};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    /// Reference loop radius.
    pub r_r: f64,
    /// Reference loop period.
    pub t_r: f64,
    pub duration: f64,
    pub x0: Vec<f64>,
    pub horizon: usize,
    pub variant: Variant,
    /// CBF-constrained steps for NMPC-DCBF; `None` means the full horizon.
    pub m_cbf: Option<usize>,
    pub gamma: f64,
    /// Slack variables for NMPC-DCBF (its intended form when tracking).
    pub slack: bool,
    pub cost: CostSpec,
    pub timing: bool,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            r_r: 1.1,
            t_r: 10.0,
            duration: 20.0,
            x0: vec![-2.0, -2.0, 0.0, 0.0, 0.0],
            horizon: 30,
            variant: Variant::MpcMci,
            m_cbf: None,
            gamma: 0.2,
            slack: true,
            cost: CostSpec::default(),
            timing: false,
        }
    }
}

impl TrackingConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    pub fn reference(&self) -> Reference {
        Reference::Circle {
            center: [0.0, 0.0],
            radius: self.r_r,
            period: self.t_r,
        }
    }

    /// Formulation used at every step.
    pub fn params(&self) -> FormulationParams {
        let mut p = FormulationParams::new(self.variant, self.horizon).with_gamma(self.gamma);
        if self.variant == Variant::NmpcDcbf {
            p = p.with_slack(self.slack);
            if let Some(m) = self.m_cbf {
                p = p.with_m_cbf(m);
            }
        }
        p
    }

    pub fn validate(&self, plant: &Plant) -> Result<()> {
        if !(self.r_r > 0.0) || !(self.t_r > 0.0) {
            return Err(Error::InvalidParameter("r_r and t_r must be > 0".into()));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidParameter("duration must be finite and >= 0".into()));
        }
        check_dim("x0", plant.state_dim, self.x0.len())?;
        self.params().validate()
    }

    fn steps(&self, dt: f64) -> usize {
        (self.duration / dt).round() as usize
    }
}

/// One closed-loop step: the state at `t`, the control applied from it and
/// how it was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    pub status: Status,
    /// The recovery law replaced a failed solve.
    pub fallback: bool,
    pub solve_ms: f64,
    pub h: f64,
    pub d: f64,
    pub reference: Vec<f64>,
    pub err: f64,
    /// Violation of the shifted warm start against this step's problem,
    /// when the previous step's solve converged.
    pub warm_violation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub config: TrackingConfig,
    pub dt: f64,
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryLog {
    /// Mean position error over rows with `t >= from`.
    pub fn mean_error_since(&self, from: f64) -> f64 {
        let errs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.t >= from - 1e-9)
            .map(|r| r.err)
            .collect();
        if errs.is_empty() {
            f64::NAN
        } else {
            errs.iter().sum::<f64>() / errs.len() as f64
        }
    }

    pub fn min_distance(&self) -> f64 {
        self.rows.iter().map(|r| r.d).fold(f64::INFINITY, f64::min)
    }

    pub fn min_barrier(&self) -> f64 {
        self.rows.iter().map(|r| r.h).fold(f64::INFINITY, f64::min)
    }

    pub fn fallback_count(&self) -> usize {
        self.rows.iter().filter(|r| r.fallback).count()
    }

    /// Writes `t,x,y,theta,v,omega,a,alpha,status,h,d,ref_x,ref_y,err`,
    /// preceded by a comment line naming the formulation.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let c = &self.config;
        writeln!(
            w,
            "# variant={} N={} m_cbf={} slack={} gamma={}",
            c.variant,
            c.horizon,
            c.m_cbf.unwrap_or(c.horizon),
            c.variant == Variant::NmpcDcbf && c.slack,
            c.gamma
        )?;
        writeln!(w, "t,x,y,theta,v,omega,a,alpha,status,h,d,ref_x,ref_y,err")?;
        for r in &self.rows {
            write!(w, "{:.2}", r.t)?;
            for v in &r.state {
                write!(w, ",{v}")?;
            }
            for v in &r.control {
                write!(w, ",{v}")?;
            }
            writeln!(
                w,
                ",{},{},{},{},{},{}",
                r.status, r.h, r.d, r.reference[0], r.reference[1], r.err
            )?;
        }
        Ok(())
    }
}

fn position_error(x: &[f64], r: &[f64]) -> f64 {
    x.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Runs the closed loop for `round(duration / dt)` steps and logs one row
/// per visited state, including the final one.
///
/// The first solve is cold-started from the recovery rollout; later solves
/// start from the previous solution shifted by one step. A control from a
/// solve that did not reach a feasible point is never applied: the recovery
/// law is used instead and the row is flagged.
pub fn run_receding_horizon(
    plant: &Plant,
    safety: &SafetySpec,
    cfg: &TrackingConfig,
    solver_cfg: &SolverConfig,
) -> Result<TrajectoryLog> {
    cfg.validate(plant)?;
    solver_cfg.validate()?;
    let params = cfg.params();
    let cost = CostSpec {
        reference: Some(cfg.reference()),
        ..cfg.cost.clone()
    };
    if cfg.variant == Variant::MpcMci && safety.distance(&cfg.x0) < 0.0 {
        return Err(Error::InfeasibleStart(safety.distance(&cfg.x0)));
    }
    let dt = plant.dt;
    let steps = cfg.steps(dt);
    let reference = cfg.reference();
    let mut x = cfg.x0.clone();
    let mut prev: Option<(OcpProblem, Vec<f64>)> = None;
    let mut rows = Vec::with_capacity(steps + 1);

    for i in 0..=steps {
        let t = i as f64 * dt;
        let started = cfg.timing.then(Instant::now);
        let (control, status, fallback, warm_violation, next_prev) =
            match build_problem(plant, safety, &cost, &params, &x, t) {
                Ok(problem) => {
                    let warm = match &prev {
                        Some((pp, z)) => shift_warm_start(z, pp, &problem)?,
                        None => WarmStart::recovery(&problem),
                    };
                    let warm_violation = prev.as_ref().map(|_| violation(&problem, &warm.values));
                    let res = solve(&problem, &warm.values, solver_cfg)?;
                    if res.status.is_feasible() {
                        let u = problem.controls(&res.primal)[0].0.clone();
                        (u, res.status, false, warm_violation, Some((problem, res.primal)))
                    } else {
                        (safety.recovery_control(&x).0, res.status, true, warm_violation, None)
                    }
                }
                Err(Error::InfeasibleStart(_)) => {
                    (safety.recovery_control(&x).0, Status::Infeasible, true, None, None)
                }
                Err(e) => return Err(e),
            };
        let ref_pt = reference.at(t);
        rows.push(TrajectoryRow {
            t,
            state: x.clone(),
            control: control.clone(),
            status,
            fallback,
            solve_ms: started.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3),
            h: safety.barrier(&x),
            d: safety.distance(&x),
            err: position_error(&x[..2], &ref_pt),
            reference: ref_pt,
            warm_violation,
        });
        prev = next_prev;
        if i < steps {
            x = plant.step(&x, &control)?.0;
        }
    }
    Ok(TrajectoryLog {
        config: cfg.clone(),
        dt,
        rows,
    })
}
