//! One-step reachability probes: which sampled first controls lead to a next
//! state from which the N-step problem stays feasible.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlVector, Plant, PlantKind};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ocp::{build_problem, extend_warm_start, CostSpec, FormulationParams, OcpProblem, Variant, WarmStart};
use crate::safety::SafetySpec;
use crate::solver::{feasibility_phase, SolverConfig};

use super::grid::Verdict;

/// One formulation whose reachable set is probed. `m_cbf` only matters for
/// NMPC-DCBF and is reported as 0 otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeCase {
    pub variant: Variant,
    pub horizon: usize,
    pub m_cbf: usize,
}

impl ProbeCase {
    pub fn mci(horizon: usize) -> Self {
        ProbeCase {
            variant: Variant::MpcMci,
            horizon,
            m_cbf: 0,
        }
    }

    pub fn nmpc(horizon: usize, m_cbf: usize) -> Self {
        ProbeCase {
            variant: Variant::NmpcDcbf,
            horizon,
            m_cbf,
        }
    }

    fn params(&self) -> FormulationParams {
        let p = FormulationParams::new(self.variant, self.horizon);
        if self.variant == Variant::NmpcDcbf {
            p.with_m_cbf(self.m_cbf)
        } else {
            p
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub x0: Vec<f64>,
    pub cases: Vec<ProbeCase>,
    /// Grid indices and value of each sampled first control.
    pub controls: Vec<([usize; 2], Vec<f64>)>,
    pub next_states: Vec<Vec<f64>>,
    /// `membership[c][i]` for `cases[c]` and `controls[i]`.
    pub membership: Vec<Vec<Verdict>>,
}

impl ProbeReport {
    fn case_index(&self, case: ProbeCase) -> Option<usize> {
        self.cases.iter().position(|c| *c == case)
    }

    pub fn bitmap(&self, case: ProbeCase) -> Option<Vec<bool>> {
        let c = self.case_index(case)?;
        Some(self.membership[c].iter().map(|v| *v == Verdict::Feasible).collect())
    }

    /// Control indices that are members for `a` but not for `b`, ignoring
    /// points where either solve failed.
    pub fn difference(&self, a: ProbeCase, b: ProbeCase) -> Option<Vec<usize>> {
        let (ia, ib) = (self.case_index(a)?, self.case_index(b)?);
        Some(
            (0..self.controls.len())
                .filter(|&i| {
                    self.membership[ia][i] == Verdict::Feasible && self.membership[ib][i] == Verdict::Infeasible
                })
                .collect(),
        )
    }

    pub fn failures(&self) -> usize {
        self.membership
            .iter()
            .flatten()
            .filter(|v| **v == Verdict::NumericalFailure)
            .count()
    }

    /// Writes `N,M,iu1,iu2,u1,u2,x1_0..x1_{n-1},member`, one block per case.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "N,M,iu1,iu2,u1,u2")?;
        for j in 0..self.x0.len() {
            write!(w, ",x1_{j}")?;
        }
        writeln!(w, ",member")?;
        for (case, row) in self.cases.iter().zip(&self.membership) {
            for ((idx, u), (x1, m)) in self.controls.iter().zip(self.next_states.iter().zip(row)) {
                write!(
                    w,
                    "{},{},{},{},{},{}",
                    case.horizon,
                    case.m_cbf,
                    idx[0],
                    idx[1],
                    u[0],
                    u.get(1).copied().unwrap_or(0.0)
                )?;
                for v in x1 {
                    write!(w, ",{v}")?;
                }
                writeln!(w, ",{}", u8::from(*m == Verdict::Feasible))?;
            }
        }
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    if n == 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

fn pinned(mut problem: OcpProblem, u: &[f64]) -> OcpProblem {
    let r = problem.layout.control(0);
    problem.lower[r.clone()].copy_from_slice(u);
    problem.upper[r].copy_from_slice(u);
    problem
}

/// Tests, for every first control on a `grid[0] x grid[1]` lattice over the
/// control bounds, whether the problem of each case at `x0` stays feasible
/// with `u_0` pinned to that control. Membership of `x_1 = f(x0, u_0)` in
/// the case's reachable set is exactly that feasibility.
pub fn reachability_probe(
    plant: &Plant,
    safety: &SafetySpec,
    x0: &[f64],
    cases: &[ProbeCase],
    grid: [usize; 2],
    cfg: &SolverConfig,
    exec: Execution,
) -> Result<ProbeReport> {
    cfg.validate()?;
    if grid[0] == 0 || grid[1] == 0 {
        return Err(Error::InvalidParameter("control grid counts must be >= 1".into()));
    }
    let d0 = safety.distance(x0);
    if d0 < 0.0 {
        return Err(Error::InfeasibleStart(d0));
    }
    for c in cases {
        c.params().validate()?;
    }
    let b = &plant.bounds;
    let mut controls = Vec::new();
    for i1 in 0..grid[0] {
        for i2 in 0..grid[1] {
            let mut u = vec![linspace(b.lower[0], b.upper[0], grid[0], i1)];
            if plant.control_dim > 1 {
                u.push(linspace(b.lower[1], b.upper[1], grid[1], i2));
            }
            controls.push(([i1, i2], u));
        }
    }
    let next_states = controls
        .iter()
        .map(|(_, u)| plant.step(x0, u).map(|x| x.0))
        .collect::<Result<Vec<_>>>()?;

    // ascending horizons per variant so that each solution seeds the next
    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.sort_by_key(|&i| (cases[i].variant.as_str(), cases[i].horizon, cases[i].m_cbf));

    let per_control = exec.map(&controls, |_, (_, u)| -> Result<Vec<Verdict>> {
        let mut out = vec![Verdict::NumericalFailure; cases.len()];
        let mut prev: Option<(Variant, OcpProblem, Vec<f64>)> = None;
        for &ci in &order {
            let case = cases[ci];
            let base = build_problem(plant, safety, &CostSpec::default(), &case.params(), x0, 0.0)?;
            let problem = pinned(base, u);
            let first = [ControlVector::from(u.as_slice())];
            let mut starts = Vec::new();
            if let Some((v, pp, z)) = &prev {
                if *v == case.variant && pp.layout.horizon <= case.horizon {
                    starts.push(extend_warm_start(z, pp, &problem)?);
                }
            }
            starts.push(WarmStart::rollout(&problem, &first));
            if plant.kind == PlantKind::Unicycle {
                let turn = plant.bounds.upper[1];
                starts.push(WarmStart::rollout_steering(&problem, &first, &[0.0, turn]));
                starts.push(WarmStart::rollout_steering(&problem, &first, &[0.0, -turn]));
            }
            let mut verdict = Verdict::NumericalFailure;
            for s in &starts {
                let res = feasibility_phase(&problem, &s.values, cfg)?;
                if res.status.is_feasible() {
                    verdict = Verdict::Feasible;
                    prev = Some((case.variant, problem.clone(), res.primal));
                    break;
                }
                if res.status != crate::solver::Status::NumericalFailure {
                    verdict = Verdict::Infeasible;
                }
            }
            out[ci] = verdict;
        }
        Ok(out)
    });
    let mut membership = vec![Vec::with_capacity(controls.len()); cases.len()];
    for r in per_control {
        for (c, v) in r?.into_iter().enumerate() {
            membership[c].push(v);
        }
    }
    Ok(ProbeReport {
        x0: x0.to_vec(),
        cases: cases.to_vec(),
        controls,
        next_states,
        membership,
    })
}
