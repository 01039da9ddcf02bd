//! Multiple-shooting transcription of the four finite-horizon formulations
//! (plain MPC, NMPC-DCBF, DTCBF-MPC and MPC-MCI) into a box-bounded
//! nonlinear program, plus the warm starts used by the receding-horizon loop.
//!
//! Decision vector layout: `[x_1 .. x_N | u_0 .. u_{N-1} | w_0 .. w_{M-1}]`.
//! The current state `x_0` is a fixed parameter and enters blocks as
//! constants.
//!
//! Every objective term and constraint is a small [`Block`] reading a handful
//! of decision variables. The objective is the sum of squared block outputs;
//! equality blocks target zero and inequality blocks target `>= 0`.

use std::f64::consts::PI;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ad::{Dual, Real, MAX_DERIVS};
use crate::dynamics::{ControlVector, Plant, StateConstraint, StateVector};
use crate::error::{check_dim, Error, Result};
use crate::safety::SafetySpec;

/// Largest number of scalar inputs (variables or constants) one block reads.
pub const MAX_INPUTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "mpc")]
    Mpc,
    #[serde(rename = "nmpc-dcbf")]
    NmpcDcbf,
    #[serde(rename = "dtcbf-mpc")]
    DtcbfMpc,
    #[serde(rename = "mpc-mci")]
    MpcMci,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Mpc,
        Variant::NmpcDcbf,
        Variant::DtcbfMpc,
        Variant::MpcMci,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Mpc => "mpc",
            Variant::NmpcDcbf => "nmpc-dcbf",
            Variant::DtcbfMpc => "dtcbf-mpc",
            Variant::MpcMci => "mpc-mci",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// Time-indexed position reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Counter-clockwise loop starting at angle zero.
    Circle {
        center: [f64; 2],
        radius: f64,
        period: f64,
    },
    Fixed(Vec<f64>),
}

impl Reference {
    pub fn at(&self, t: f64) -> Vec<f64> {
        match self {
            Reference::Circle {
                center,
                radius,
                period,
            } => {
                let phase = 2.0 * PI * t / period;
                vec![
                    center[0] + radius * phase.cos(),
                    center[1] + radius * phase.sin(),
                ]
            }
            Reference::Fixed(p) => p.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Reference::Circle { .. } => 2,
            Reference::Fixed(p) => p.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSpec {
    pub stage_pos_weight: f64,
    pub stage_ctrl_weight: f64,
    /// Scales the terminal position error.
    pub terminal_weight: f64,
    /// Weight of `(w_k - 1)^2` for NMPC-DCBF slacks.
    pub slack_weight: f64,
    pub reference: Option<Reference>,
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec {
            stage_pos_weight: 10.0,
            stage_ctrl_weight: 1.0,
            terminal_weight: 10.0,
            slack_weight: 100.0,
            reference: None,
        }
    }
}

impl CostSpec {
    fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("stage_pos_weight", self.stage_pos_weight),
            ("stage_ctrl_weight", self.stage_ctrl_weight),
            ("terminal_weight", self.terminal_weight),
            ("slack_weight", self.slack_weight),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// Constraint function `H` on the transient states of DTCBF-MPC.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransientFn {
    /// `H = h'`, the quasi-barrier itself.
    #[default]
    Barrier,
    /// `H = d'`.
    Distance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormulationParams {
    pub variant: Variant,
    pub horizon: usize,
    /// Number of CBF-constrained steps for NMPC-DCBF; `None` means `horizon`.
    pub m_cbf: Option<usize>,
    pub gamma: f64,
    pub slack_enabled: bool,
    /// Optional terminal set, as boxes on entries of `x_N`.
    pub terminal_set: Option<Vec<StateConstraint>>,
    pub transient: TransientFn,
}

impl FormulationParams {
    pub fn new(variant: Variant, horizon: usize) -> Self {
        FormulationParams {
            variant,
            horizon,
            m_cbf: None,
            gamma: 0.2,
            slack_enabled: false,
            terminal_set: None,
            transient: TransientFn::Barrier,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_slack(mut self, on: bool) -> Self {
        self.slack_enabled = on;
        self
    }

    pub fn with_m_cbf(mut self, m: usize) -> Self {
        self.m_cbf = Some(m);
        self
    }

    pub fn cbf_steps(&self) -> usize {
        self.m_cbf.unwrap_or(self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidParameter("gamma must lie in (0, 1]".into()));
        }
        if self.variant == Variant::NmpcDcbf {
            let m = self.cbf_steps();
            if m == 0 || m > self.horizon {
                return Err(Error::InvalidParameter(format!(
                    "m_cbf = {m} must lie in [1, {}]",
                    self.horizon
                )));
            }
        } else if self.slack_enabled {
            return Err(Error::Unsupported(format!(
                "slack variables only exist for nmpc-dcbf, not {}",
                self.variant
            )));
        }
        Ok(())
    }
}

/// Where a block input comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Source {
    Var(usize),
    Const(f64),
}

/// What a block means; used for reporting and for counting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Dynamics,
    StageCost,
    ControlCost,
    TerminalCost,
    SlackCost,
    /// `d'(x_k) >= 0` on transient states.
    Distance,
    /// `h'(x_N) >= 0`.
    TerminalBarrier,
    /// `h'(x_{k+1}) >= w_k (1 - gamma) h'(x_k)`.
    CbfDecay,
    /// `H(x_k) >= 0` on DTCBF transient states.
    Transient,
    /// `h_2(x_{N-1}) >= 0`.
    QuasiBarrier,
    /// `h_2(x_N) >= (1 - gamma) h_2(x_{N-1})`.
    QuasiDecay,
    StateBound,
    TerminalSet,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockFn {
    /// `x_{k+1} - f(x_k, u_k)`; inputs `(x_k, u_k, x_{k+1})`.
    Defect,
    DistanceSq,
    BarrierSq,
    /// `h'(x_next) - w (1 - gamma) h'(x_prev)`; inputs `(x_prev, x_next, w)`.
    Decay { gamma: f64 },
    /// `(x_i - lower, upper - x_i)`.
    StateBox { index: usize, lower: f64, upper: f64 },
    /// `scale * (z - offset)` elementwise.
    Affine { scale: f64, offset: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub role: Role,
    pub stage: usize,
    pub func: BlockFn,
    pub inputs: Vec<Source>,
    /// Decision-variable indices read by this block, in input order.
    pub vars: Vec<usize>,
    pub n_out: usize,
}

impl Block {
    fn new(role: Role, stage: usize, func: BlockFn, inputs: Vec<Source>, nx: usize) -> Self {
        assert!(inputs.len() <= MAX_INPUTS, "block reads too many inputs");
        let vars: Vec<usize> = inputs
            .iter()
            .filter_map(|s| match s {
                Source::Var(i) => Some(*i),
                Source::Const(_) => None,
            })
            .collect();
        assert!(vars.len() <= MAX_DERIVS);
        let n_out = match &func {
            BlockFn::Defect => nx,
            BlockFn::DistanceSq | BlockFn::BarrierSq | BlockFn::Decay { .. } => 1,
            BlockFn::StateBox { .. } => 2,
            BlockFn::Affine { offset, .. } => offset.len(),
        };
        Block {
            role,
            stage,
            func,
            inputs,
            vars,
            n_out,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub horizon: usize,
    pub nx: usize,
    pub nu: usize,
    pub states: Range<usize>,
    pub controls: Range<usize>,
    pub slacks: Range<usize>,
}

impl Layout {
    /// Slice of predicted state `x_k`, `k` in `1..=N`.
    pub fn state(&self, k: usize) -> Range<usize> {
        debug_assert!(k >= 1 && k <= self.horizon);
        let s = self.states.start + (k - 1) * self.nx;
        s..s + self.nx
    }

    /// Slice of control `u_k`, `k` in `0..N`.
    pub fn control(&self, k: usize) -> Range<usize> {
        let s = self.controls.start + k * self.nu;
        s..s + self.nu
    }

    pub fn slack(&self, k: usize) -> usize {
        self.slacks.start + k
    }

    pub fn n_slacks(&self) -> usize {
        self.slacks.len()
    }
}

#[derive(Clone, Debug)]
pub struct OcpProblem {
    pub n_vars: usize,
    pub layout: Layout,
    pub objective: Vec<Block>,
    pub eq_constraints: Vec<Block>,
    pub ineq_constraints: Vec<Block>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub x_current: StateVector,
    pub t_now: f64,
    pub plant: Plant,
    pub safety: SafetySpec,
    pub params: FormulationParams,
}

fn state_sources(layout: &Layout, x_current: &[f64], k: usize) -> Vec<Source> {
    if k == 0 {
        x_current.iter().map(|&v| Source::Const(v)).collect()
    } else {
        layout.state(k).map(Source::Var).collect()
    }
}

/// Transcribes one formulation at the current state.
///
/// For MPC-MCI the signed distance of `x_current` must be non-negative;
/// otherwise [`Error::InfeasibleStart`] is returned without building anything.
pub fn build_problem(
    plant: &Plant,
    safety: &SafetySpec,
    cost: &CostSpec,
    params: &FormulationParams,
    x_current: &[f64],
    t_now: f64,
) -> Result<OcpProblem> {
    check_dim("current state", plant.state_dim, x_current.len())?;
    params.validate()?;
    cost.validate()?;
    if x_current.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("current state is not finite".into()));
    }
    if params.variant == Variant::MpcMci {
        let d = safety.distance(x_current);
        if d < 0.0 {
            return Err(Error::InfeasibleStart(d));
        }
    }

    let (n, nx, nu) = (params.horizon, plant.state_dim, plant.control_dim);
    let n_slack = if params.variant == Variant::NmpcDcbf && params.slack_enabled {
        params.cbf_steps()
    } else {
        0
    };
    let layout = Layout {
        horizon: n,
        nx,
        nu,
        states: 0..n * nx,
        controls: n * nx..n * (nx + nu),
        slacks: n * (nx + nu)..n * (nx + nu) + n_slack,
    };
    let n_vars = layout.slacks.end;
    let mut lower = vec![f64::NEG_INFINITY; n_vars];
    let mut upper = vec![f64::INFINITY; n_vars];
    for k in 0..n {
        for (j, i) in layout.control(k).enumerate() {
            lower[i] = plant.bounds.lower[j];
            upper[i] = plant.bounds.upper[j];
        }
    }
    for k in 0..n_slack {
        lower[layout.slack(k)] = 0.0;
    }

    let xs = |k: usize| state_sources(&layout, x_current, k);
    let us = |k: usize| -> Vec<Source> { layout.control(k).map(Source::Var).collect() };
    let block = |role, stage, func, inputs| Block::new(role, stage, func, inputs, nx);

    // objective
    let mut objective = Vec::new();
    if let Some(reference) = &cost.reference {
        let pd = reference.dim();
        if pd > nx {
            return Err(Error::Unsupported(format!(
                "reference of dimension {pd} for a {nx}-state plant"
            )));
        }
        let pos = |k: usize| -> Vec<Source> { xs(k).into_iter().take(pd).collect() };
        if cost.stage_pos_weight > 0.0 {
            for k in 0..n {
                objective.push(block(
                    Role::StageCost,
                    k,
                    BlockFn::Affine {
                        scale: cost.stage_pos_weight.sqrt(),
                        offset: reference.at(t_now + k as f64 * plant.dt),
                    },
                    pos(k),
                ));
            }
        }
        if cost.terminal_weight > 0.0 {
            objective.push(block(
                Role::TerminalCost,
                n,
                BlockFn::Affine {
                    scale: cost.terminal_weight.sqrt(),
                    offset: reference.at(t_now + n as f64 * plant.dt),
                },
                pos(n),
            ));
        }
    }
    if cost.stage_ctrl_weight > 0.0 {
        for k in 0..n {
            objective.push(block(
                Role::ControlCost,
                k,
                BlockFn::Affine {
                    scale: cost.stage_ctrl_weight.sqrt(),
                    offset: vec![0.0; nu],
                },
                us(k),
            ));
        }
    }
    if cost.slack_weight > 0.0 {
        for k in 0..n_slack {
            objective.push(block(
                Role::SlackCost,
                k,
                BlockFn::Affine {
                    scale: cost.slack_weight.sqrt(),
                    offset: vec![1.0],
                },
                vec![Source::Var(layout.slack(k))],
            ));
        }
    }

    // dynamics
    let eq_constraints: Vec<Block> = (0..n)
        .map(|k| {
            let mut inputs = xs(k);
            inputs.extend(us(k));
            inputs.extend(xs(k + 1));
            block(Role::Dynamics, k, BlockFn::Defect, inputs)
        })
        .collect();

    // inequalities
    let mut ineq = Vec::new();
    for c in &plant.state_constraints {
        for k in 1..=n {
            ineq.push(block(
                Role::StateBound,
                k,
                BlockFn::StateBox {
                    index: c.index,
                    lower: c.lower,
                    upper: c.upper,
                },
                xs(k),
            ));
        }
    }
    if let Some(set) = &params.terminal_set {
        for c in set {
            if c.index >= nx {
                return Err(Error::InvalidParameter(format!(
                    "terminal set index {} out of range",
                    c.index
                )));
            }
            ineq.push(block(
                Role::TerminalSet,
                n,
                BlockFn::StateBox {
                    index: c.index,
                    lower: c.lower,
                    upper: c.upper,
                },
                xs(n),
            ));
        }
    }
    match params.variant {
        Variant::Mpc => {}
        Variant::MpcMci => {
            for k in 1..n {
                ineq.push(block(Role::Distance, k, BlockFn::DistanceSq, xs(k)));
            }
            ineq.push(block(Role::TerminalBarrier, n, BlockFn::BarrierSq, xs(n)));
        }
        Variant::NmpcDcbf => {
            for k in 0..params.cbf_steps() {
                let mut inputs = xs(k);
                inputs.extend(xs(k + 1));
                inputs.push(if n_slack > 0 {
                    Source::Var(layout.slack(k))
                } else {
                    Source::Const(0.0)
                });
                ineq.push(block(
                    Role::CbfDecay,
                    k,
                    BlockFn::Decay {
                        gamma: params.gamma,
                    },
                    inputs,
                ));
            }
        }
        Variant::DtcbfMpc => {
            let h_fn = match params.transient {
                TransientFn::Barrier => BlockFn::BarrierSq,
                TransientFn::Distance => BlockFn::DistanceSq,
            };
            for k in 1..n.saturating_sub(1) {
                ineq.push(block(Role::Transient, k, h_fn.clone(), xs(k)));
            }
            ineq.push(block(Role::QuasiBarrier, n - 1, BlockFn::BarrierSq, xs(n - 1)));
            let mut inputs = xs(n - 1);
            inputs.extend(xs(n));
            inputs.push(Source::Const(1.0));
            ineq.push(block(
                Role::QuasiDecay,
                n,
                BlockFn::Decay {
                    gamma: params.gamma,
                },
                inputs,
            ));
        }
    }

    Ok(OcpProblem {
        n_vars,
        layout,
        objective,
        eq_constraints,
        ineq_constraints: ineq,
        lower,
        upper,
        x_current: StateVector::from(x_current),
        t_now,
        plant: plant.clone(),
        safety: safety.clone(),
        params: params.clone(),
    })
}

impl OcpProblem {
    fn eval_fn<T: Real>(&self, func: &BlockFn, z: &[T], out: &mut [T]) {
        let nx = self.layout.nx;
        match func {
            BlockFn::Defect => {
                let nu = self.layout.nu;
                let mut f = [T::cst(0.0); MAX_INPUTS];
                self.plant
                    .step_generic(&z[..nx], &z[nx..nx + nu], &mut f[..nx]);
                for i in 0..nx {
                    out[i] = z[nx + nu + i] - f[i];
                }
            }
            BlockFn::DistanceSq => out[0] = self.safety.distance_sq_generic(z),
            BlockFn::BarrierSq => out[0] = self.safety.barrier_sq_generic(z),
            BlockFn::Decay { gamma } => {
                let prev = self.safety.barrier_sq_generic(&z[..nx]);
                let next = self.safety.barrier_sq_generic(&z[nx..2 * nx]);
                out[0] = next - z[2 * nx] * prev * (1.0 - gamma);
            }
            BlockFn::StateBox {
                index,
                lower,
                upper,
            } => {
                out[0] = z[*index] - *lower;
                out[1] = -z[*index] + *upper;
            }
            BlockFn::Affine { scale, offset } => {
                for (i, o) in offset.iter().enumerate() {
                    out[i] = (z[i] - *o) * *scale;
                }
            }
        }
    }

    /// Block outputs at decision vector `z`.
    pub fn block_value(&self, b: &Block, z: &[f64], out: &mut [f64]) {
        let mut local = [0.0; MAX_INPUTS];
        for (l, s) in local.iter_mut().zip(&b.inputs) {
            *l = match *s {
                Source::Var(i) => z[i],
                Source::Const(c) => c,
            };
        }
        self.eval_fn(&b.func, &local[..b.inputs.len()], out);
    }

    /// Block outputs and their Jacobian with respect to `b.vars`, row-major
    /// into `jac` (`n_out x vars.len()`).
    pub fn block_jacobian(&self, b: &Block, z: &[f64], out: &mut [f64], jac: &mut [f64]) {
        let mut local = [Dual::constant(0.0); MAX_INPUTS];
        let mut slot = 0;
        for (l, s) in local.iter_mut().zip(&b.inputs) {
            *l = match *s {
                Source::Var(i) => {
                    slot += 1;
                    Dual::variable(z[i], slot - 1)
                }
                Source::Const(c) => Dual::constant(c),
            };
        }
        let mut res = [Dual::constant(0.0); MAX_INPUTS];
        self.eval_fn(&b.func, &local[..b.inputs.len()], &mut res[..b.n_out]);
        let nv = b.vars.len();
        for (r, d) in res[..b.n_out].iter().enumerate() {
            out[r] = d.v;
            jac[r * nv..(r + 1) * nv].copy_from_slice(&d.d[..nv]);
        }
    }

    fn collect(&self, blocks: &[Block], z: &[f64]) -> Vec<f64> {
        let mut vals = Vec::new();
        let mut buf = [0.0; MAX_INPUTS];
        for b in blocks {
            self.block_value(b, z, &mut buf[..b.n_out]);
            vals.extend_from_slice(&buf[..b.n_out]);
        }
        vals
    }

    /// Sum of squared objective-block outputs.
    pub fn objective_value(&self, z: &[f64]) -> f64 {
        self.collect(&self.objective, z).iter().map(|r| r * r).sum()
    }

    pub fn eq_values(&self, z: &[f64]) -> Vec<f64> {
        self.collect(&self.eq_constraints, z)
    }

    pub fn ineq_values(&self, z: &[f64]) -> Vec<f64> {
        self.collect(&self.ineq_constraints, z)
    }

    pub fn n_eq(&self) -> usize {
        self.eq_constraints.iter().map(|b| b.n_out).sum()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq_constraints.iter().map(|b| b.n_out).sum()
    }

    pub fn count_role(&self, role: Role) -> usize {
        self.ineq_constraints
            .iter()
            .chain(&self.eq_constraints)
            .chain(&self.objective)
            .filter(|b| b.role == role)
            .count()
    }

    /// Largest violation over equalities, inequalities and variable bounds.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let eq = self.eq_values(z).iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let ineq = self.ineq_values(z).iter().fold(0.0f64, |m, g| m.max(-g));
        let bounds = z
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .fold(0.0f64, |m, (v, (l, u))| m.max(l - v).max(v - u));
        eq.max(ineq).max(bounds)
    }

    /// Inequality and bound violation of the point whose states are
    /// re-simulated from the controls in `z` (slacks kept). This is the
    /// physical shortfall of the control sequence, unaffected by how a
    /// violation is shared between dynamics defects and constraints.
    pub fn rollout_violation(&self, z: &[f64]) -> f64 {
        let mut zr = z.to_vec();
        let mut x = self.x_current.to_vec();
        let mut next = vec![0.0; self.layout.nx];
        for k in 0..self.layout.horizon {
            let u = &z[self.layout.control(k)];
            self.plant.step_generic(&x, u, &mut next);
            zr[self.layout.state(k + 1)].copy_from_slice(&next);
            std::mem::swap(&mut x, &mut next);
        }
        let ineq = self.ineq_values(&zr).iter().fold(0.0f64, |m, g| m.max(-g));
        let bounds = zr
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .fold(0.0f64, |m, (v, (l, u))| m.max(l - v).max(v - u));
        ineq.max(bounds)
    }

    pub fn controls(&self, z: &[f64]) -> Vec<ControlVector> {
        (0..self.layout.horizon)
            .map(|k| ControlVector::from(&z[self.layout.control(k)]))
            .collect()
    }

    /// Predicted states `x_0 .. x_N` (with `x_0 = x_current`).
    pub fn states(&self, z: &[f64]) -> Vec<StateVector> {
        std::iter::once(self.x_current.clone())
            .chain((1..=self.layout.horizon).map(|k| StateVector::from(&z[self.layout.state(k)])))
            .collect()
    }

    pub fn slacks(&self, z: &[f64]) -> Vec<f64> {
        z[self.layout.slacks.clone()].to_vec()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Cold,
    Shifted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarmStart {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl WarmStart {
    /// The all-zero vector projected onto the variable bounds.
    pub fn zeros(problem: &OcpProblem) -> Self {
        let values = (0..problem.n_vars)
            .map(|i| 0.0f64.clamp(problem.lower[i], problem.upper[i]))
            .collect();
        WarmStart {
            values,
            provenance: Provenance::Cold,
        }
    }

    /// States obtained by simulating `controls` (clamped to the bounds) from
    /// the current state; missing controls are filled with the recovery law.
    pub fn rollout(problem: &OcpProblem, controls: &[ControlVector]) -> Self {
        let values = fill_from_controls(problem, &problem.x_current, controls, None);
        WarmStart {
            values,
            provenance: Provenance::Cold,
        }
    }

    /// Rollout of `prefix` followed by the recovery law with the non-speed
    /// inputs held at `steer`.
    pub fn rollout_steering(problem: &OcpProblem, prefix: &[ControlVector], steer: &[f64]) -> Self {
        let values = fill_from_controls(problem, &problem.x_current, prefix, Some(steer));
        WarmStart {
            values,
            provenance: Provenance::Cold,
        }
    }

    /// Rollout of the recovery law from the current state.
    pub fn recovery(problem: &OcpProblem) -> Self {
        Self::rollout(problem, &[])
    }

    /// Rollout holding the speed channel on the recovery law while the other
    /// inputs are fixed at `steer` (e.g. full turn left or right).
    pub fn braking_turn(problem: &OcpProblem, steer: &[f64]) -> Self {
        let values = fill_from_controls(problem, &problem.x_current, &[], Some(steer));
        WarmStart {
            values,
            provenance: Provenance::Cold,
        }
    }
}

fn fill_from_controls(
    problem: &OcpProblem,
    x0: &[f64],
    controls: &[ControlVector],
    steer: Option<&[f64]>,
) -> Vec<f64> {
    let layout = &problem.layout;
    let plant = &problem.plant;
    let mut z = vec![0.0; problem.n_vars];
    let mut x = x0.to_vec();
    let mut next = vec![0.0; layout.nx];
    let mut prev_h = problem.safety.barrier_sq(&x);
    for k in 0..layout.horizon {
        let mut u = match controls.get(k) {
            Some(u) => u.0.clone(),
            None => {
                let mut u = problem.safety.recovery_control(&x).0;
                if let Some(s) = steer {
                    for (j, uj) in u.iter_mut().enumerate() {
                        if j != plant.accel_index() {
                            *uj = s[j];
                        }
                    }
                }
                u
            }
        };
        plant.bounds.clamp(&mut u);
        plant.step_generic(&x, &u, &mut next);
        z[layout.control(k)].copy_from_slice(&u);
        z[layout.state(k + 1)].copy_from_slice(&next);
        std::mem::swap(&mut x, &mut next);
        if k < layout.n_slacks() {
            let h = problem.safety.barrier_sq(&x);
            z[layout.slack(k)] = fit_slack(prev_h, h, problem.params.gamma);
            prev_h = h;
        }
    }
    z
}

/// Slack closest to the nominal value 1 that satisfies the decay constraint
/// for the given barrier values, when one exists.
fn fit_slack(prev: f64, next: f64, gamma: f64) -> f64 {
    let c = (1.0 - gamma) * prev;
    if c > 0.0 {
        (next / c).clamp(0.0, 1.0)
    } else if c < 0.0 {
        (next / c).max(1.0)
    } else {
        1.0
    }
}

/// Shifted warm start: previous controls moved one step forward, the
/// recovery law appended at the previous terminal state, and states
/// re-simulated from the new current state.
pub fn shift_warm_start(
    prev_solution: &[f64],
    prev_problem: &OcpProblem,
    new_problem: &OcpProblem,
) -> Result<WarmStart> {
    check_dim("previous solution", prev_problem.n_vars, prev_solution.len())?;
    check_dim("horizon", prev_problem.layout.horizon, new_problem.layout.horizon)?;
    check_dim("state", prev_problem.layout.nx, new_problem.layout.nx)?;
    check_dim("control", prev_problem.layout.nu, new_problem.layout.nu)?;
    let n = prev_problem.layout.horizon;
    let terminal = &prev_solution[prev_problem.layout.state(n)];
    let mut controls: Vec<ControlVector> = prev_problem
        .controls(prev_solution)
        .into_iter()
        .skip(1)
        .collect();
    controls.push(new_problem.safety.recovery_control(terminal));
    let values = fill_from_controls(new_problem, &new_problem.x_current, &controls, None);
    Ok(WarmStart {
        values,
        provenance: Provenance::Shifted,
    })
}

/// Extends a solution of a shorter-horizon problem at the same current state
/// by appending recovery steps after its terminal state.
pub fn extend_warm_start(
    prev_solution: &[f64],
    prev_problem: &OcpProblem,
    new_problem: &OcpProblem,
) -> Result<WarmStart> {
    check_dim("previous solution", prev_problem.n_vars, prev_solution.len())?;
    if new_problem.layout.horizon < prev_problem.layout.horizon {
        return Err(Error::InvalidParameter(
            "cannot extend to a shorter horizon".into(),
        ));
    }
    let controls = prev_problem.controls(prev_solution);
    let mut values = fill_from_controls(new_problem, &new_problem.x_current, &controls, None);
    // keep the solved states verbatim, then continue from the solved terminal
    let np = prev_problem.layout.horizon;
    for k in 1..=np {
        values[new_problem.layout.state(k)]
            .copy_from_slice(&prev_solution[prev_problem.layout.state(k)]);
    }
    let mut x = prev_solution[prev_problem.layout.state(np)].to_vec();
    let mut next = vec![0.0; new_problem.layout.nx];
    for k in np..new_problem.layout.horizon {
        let u = new_problem.safety.recovery_control(&x);
        new_problem.plant.step_generic(&x, &u, &mut next);
        values[new_problem.layout.control(k)].copy_from_slice(&u);
        values[new_problem.layout.state(k + 1)].copy_from_slice(&next);
        std::mem::swap(&mut x, &mut next);
    }
    for k in 0..new_problem.layout.n_slacks().min(prev_problem.layout.n_slacks()) {
        values[new_problem.layout.slack(k)] = prev_solution[prev_problem.layout.slack(k)];
    }
    Ok(WarmStart {
        values,
        provenance: Provenance::Cold,
    })
}
