//! Feasibility sweep over a planar lattice of initial positions with the
//! remaining state entries held fixed.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Plant, PlantKind};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ocp::{build_problem, extend_warm_start, CostSpec, FormulationParams, OcpProblem, Variant, WarmStart};
use crate::safety::SafetySpec;
use crate::solver::{feasibility_phase, SolveResult, SolverConfig, Status};

/// Lattice, fixed state entries and formulation of one sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub fixed_theta: f64,
    pub fixed_v: f64,
    pub fixed_omega: f64,
    pub horizons: Vec<usize>,
    pub variant: Variant,
    pub gamma: f64,
    /// Record wall-clock per solve. Off by default so that artifacts are
    /// reproducible byte for byte.
    pub timing: bool,
    pub execution: Execution,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            x_range: [-2.5, 2.5],
            y_range: [-2.5, 2.5],
            nx: 100,
            ny: 100,
            fixed_theta: 0.0,
            fixed_v: 1.0,
            fixed_omega: 0.0,
            horizons: vec![2, 6, 11, 16, 21],
            variant: Variant::MpcMci,
            gamma: 0.2,
            timing: false,
            execution: Execution::default(),
        }
    }
}

impl GridSpec {
    /// Preset fixed `(theta, v, omega)` triples: case 1 is `(0, 1, 0)`,
    /// case 2 is `(1.57, 1.5, 2)`.
    pub fn case(case: u8) -> Result<Self> {
        let (theta, v, omega) = match case {
            1 => (0.0, 1.0, 0.0),
            2 => (1.57, 1.5, 2.0),
            other => {
                return Err(Error::InvalidParameter(format!("unknown case {other}, expected 1 or 2")))
            }
        };
        Ok(GridSpec {
            fixed_theta: theta,
            fixed_v: v,
            fixed_omega: omega,
            ..GridSpec::default()
        })
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_resolution(mut self, nx: usize, ny: usize) -> Self {
        self.nx = nx;
        self.ny = ny;
        self
    }

    pub fn with_horizons(mut self, horizons: &[usize]) -> Self {
        self.horizons = horizons.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("x_range", self.x_range), ("y_range", self.y_range)] {
            if !(r[0] <= r[1]) || !r.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be ordered, got {r:?}")));
            }
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidParameter("grid counts must be >= 1".into()));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::InvalidParameter("horizons must be a non-empty list of N >= 1".into()));
        }
        for h in &self.horizons {
            FormulationParams::new(self.variant, *h)
                .with_gamma(self.gamma)
                .validate()?;
        }
        Ok(())
    }

    fn axis(range: [f64; 2], n: usize, i: usize) -> f64 {
        if n == 1 {
            0.5 * (range[0] + range[1])
        } else {
            range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64
        }
    }

    /// Lattice points in row-major order (`iy` outer, `ix` inner), endpoints
    /// included.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut pts = Vec::with_capacity(self.nx * self.ny);
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                pts.push(GridPoint {
                    ix,
                    iy,
                    x: Self::axis(self.x_range, self.nx, ix),
                    y: Self::axis(self.y_range, self.ny, iy),
                });
            }
        }
        pts
    }

    fn state(&self, p: &GridPoint, plant: &Plant) -> Result<Vec<f64>> {
        match plant.kind {
            PlantKind::Unicycle => Ok(vec![p.x, p.y, self.fixed_theta, self.fixed_v, self.fixed_omega]),
            PlantKind::DoubleIntegrator => Err(Error::Unsupported(
                "planar grid sweeps need the unicycle plant".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub ix: usize,
    pub iy: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Feasible,
    Infeasible,
    NumericalFailure,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Feasible => "feasible",
            Verdict::Infeasible => "infeasible",
            Verdict::NumericalFailure => "numerical_failure",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub verdict: Verdict,
    pub max_violation: f64,
    pub solve_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon: usize,
    pub total: usize,
    pub feasible: usize,
    pub infeasible_count: usize,
    pub failures: usize,
    /// Feasible count over points with a verdict (failures excluded).
    pub feasible_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub spec: GridSpec,
    pub points: Vec<GridPoint>,
    /// `cells[h][p]` for `spec.horizons[h]` and `points[p]`.
    pub cells: Vec<Vec<Cell>>,
}

impl GridResult {
    pub fn summary(&self) -> Vec<HorizonSummary> {
        self.spec
            .horizons
            .iter()
            .zip(&self.cells)
            .map(|(&horizon, cells)| {
                let count = |v| cells.iter().filter(|c| c.verdict == v).count();
                let feasible = count(Verdict::Feasible);
                let infeasible_count = count(Verdict::Infeasible);
                let failures = count(Verdict::NumericalFailure);
                let decided = feasible + infeasible_count;
                HorizonSummary {
                    horizon,
                    total: cells.len(),
                    feasible,
                    infeasible_count,
                    failures,
                    feasible_fraction: if decided == 0 {
                        0.0
                    } else {
                        feasible as f64 / decided as f64
                    },
                }
            })
            .collect()
    }

    /// Feasibility bitmap for one horizon, in point order.
    pub fn bitmap(&self, horizon: usize) -> Option<Vec<bool>> {
        let h = self.spec.horizons.iter().position(|&n| n == horizon)?;
        Some(self.cells[h].iter().map(|c| c.verdict == Verdict::Feasible).collect())
    }

    /// Writes `case,variant,N,ix,iy,x,y,verdict,max_violation,solve_ms`.
    pub fn write_csv<W: Write>(&self, case: &str, mut w: W) -> std::io::Result<()> {
        writeln!(w, "case,variant,N,ix,iy,x,y,verdict,max_violation,solve_ms")?;
        for (n, cells) in self.spec.horizons.iter().zip(&self.cells) {
            for (p, c) in self.points.iter().zip(cells) {
                writeln!(
                    w,
                    "{case},{},{n},{},{},{},{},{},{:e},{:.3}",
                    self.spec.variant,
                    p.ix,
                    p.iy,
                    p.x,
                    p.y,
                    c.verdict.as_str(),
                    c.max_violation,
                    c.solve_ms
                )?;
            }
        }
        Ok(())
    }
}

/// Cold starts tried in order when no longer-horizon seed is available:
/// the recovery rollout, then braking while turning fully either way.
fn cold_starts(problem: &OcpProblem) -> Vec<WarmStart> {
    let mut starts = vec![WarmStart::recovery(problem)];
    if problem.plant.kind == PlantKind::Unicycle {
        let turn = problem.plant.bounds.upper[1];
        starts.push(WarmStart::braking_turn(problem, &[0.0, turn]));
        starts.push(WarmStart::braking_turn(problem, &[0.0, -turn]));
    }
    starts
}

fn to_cell(res: &SolveResult, ms: f64) -> Cell {
    let verdict = match res.status {
        Status::Optimal | Status::FeasiblePoint => Verdict::Feasible,
        Status::Infeasible | Status::IterationLimit => Verdict::Infeasible,
        Status::NumericalFailure => Verdict::NumericalFailure,
    };
    Cell {
        verdict,
        max_violation: res.max_violation,
        solve_ms: ms,
    }
}

/// Verdicts of one initial state over an ascending horizon ladder. Each
/// horizon is first seeded with the previous horizon's best point extended
/// by recovery steps, which makes feasibility at `N` carry over to larger
/// horizons for formulations where that holds.
pub(crate) fn ladder(
    plant: &Plant,
    safety: &SafetySpec,
    params: &[FormulationParams],
    x0: &[f64],
    cfg: &SolverConfig,
    timing: bool,
) -> Result<Vec<Cell>> {
    let mut out = Vec::with_capacity(params.len());
    if safety.distance(x0) < 0.0 {
        for _ in params {
            out.push(Cell {
                verdict: Verdict::Infeasible,
                max_violation: -safety.distance(x0),
                solve_ms: 0.0,
            });
        }
        return Ok(out);
    }
    let mut prev: Option<(OcpProblem, Vec<f64>)> = None;
    for p in params {
        let started = timing.then(Instant::now);
        let problem = build_problem(plant, safety, &CostSpec::default(), p, x0, 0.0)?;
        let mut starts = Vec::new();
        if let Some((pp, z)) = &prev {
            if pp.layout.horizon <= p.horizon {
                starts.push(extend_warm_start(z, pp, &problem)?);
            }
        }
        starts.extend(cold_starts(&problem));
        let mut best: Option<SolveResult> = None;
        for s in &starts {
            let res = feasibility_phase(&problem, &s.values, cfg)?;
            let done = res.status.is_feasible();
            let better = best.as_ref().is_none_or(|b| {
                !b.status.is_feasible() && res.max_violation < b.max_violation
                    || b.status == Status::NumericalFailure
            });
            if better {
                best = Some(res);
            }
            if done {
                break;
            }
        }
        let best = best.expect("at least one start");
        let ms = started.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3);
        out.push(to_cell(&best, ms));
        if best.status != Status::NumericalFailure {
            prev = Some((problem, best.primal));
        }
    }
    Ok(out)
}

/// Runs the sweep. Points are independent and evaluated with
/// `spec.execution`; results are ordered by point index regardless.
pub fn feasibility_grid(
    plant: &Plant,
    safety: &SafetySpec,
    spec: &GridSpec,
    cfg: &SolverConfig,
) -> Result<GridResult> {
    spec.validate()?;
    cfg.validate()?;
    let points = spec.points();
    // solve in ascending horizon order, report in the order given
    let mut order: Vec<usize> = (0..spec.horizons.len()).collect();
    order.sort_by_key(|&i| spec.horizons[i]);
    let params: Vec<FormulationParams> = order
        .iter()
        .map(|&i| FormulationParams::new(spec.variant, spec.horizons[i]).with_gamma(spec.gamma))
        .collect();
    let per_point = spec.execution.map(&points, |_, p| -> Result<Vec<Cell>> {
        let x0 = spec.state(p, plant)?;
        ladder(plant, safety, &params, &x0, cfg, spec.timing)
    });
    let mut cells = vec![Vec::with_capacity(points.len()); spec.horizons.len()];
    for r in per_point {
        let r = r?;
        for (k, c) in r.into_iter().enumerate() {
            cells[order[k]].push(c);
        }
    }
    Ok(GridResult {
        spec: spec.clone(),
        points,
        cells,
    })
}
