//! Box-constrained Levenberg-Marquardt on a sum of squared block residuals.
//!
//! Both solver phases reduce to this form: the augmented Lagrangian of a
//! sum-of-squares objective is itself a sum of squares (equalities shifted by
//! their multiplier estimate, inequalities through a one-sided hinge), and
//! the feasibility phase is the plain sum of squared violations.

use crate::ocp::{Block, OcpProblem};

use super::banded::{bandwidth, rcm_order, BandMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum TermKind {
    Plain,
    Equality,
    Inequality,
}

#[derive(Clone, Copy, Debug)]
struct Term<'a> {
    block: &'a Block,
    kind: TermKind,
    /// First scalar row of this term in the residual vector.
    row: usize,
    /// First entry of this term in the flat Jacobian storage.
    jac: usize,
    /// First multiplier slot (equality or inequality numbering).
    mult: usize,
}

/// Residual vector `r(z)` assembled from problem blocks.
pub(crate) struct LsqModel<'a> {
    problem: &'a OcpProblem,
    terms: Vec<Term<'a>>,
    n_rows: usize,
    n_jac: usize,
    eq_scale: f64,
    ineq_scale: f64,
    eq_shift: Vec<f64>,
    ineq_shift: Vec<f64>,
}

impl<'a> LsqModel<'a> {
    fn new(problem: &'a OcpProblem, with_objective: bool) -> Self {
        let mut terms = Vec::new();
        let (mut row, mut jac) = (0, 0);
        let mut push = |blocks: &'a [Block], kind: TermKind| {
            let mut mult = 0;
            for b in blocks {
                terms.push(Term {
                    block: b,
                    kind,
                    row,
                    jac,
                    mult,
                });
                row += b.n_out;
                jac += b.n_out * b.vars.len();
                mult += b.n_out;
            }
        };
        if with_objective {
            push(&problem.objective, TermKind::Plain);
        }
        push(&problem.eq_constraints, TermKind::Equality);
        push(&problem.ineq_constraints, TermKind::Inequality);
        LsqModel {
            problem,
            terms,
            n_rows: row,
            n_jac: jac,
            eq_scale: 1.0,
            ineq_scale: 1.0,
            eq_shift: vec![0.0; problem.n_eq()],
            ineq_shift: vec![0.0; problem.n_ineq()],
        }
    }

    /// Plain sum of squared constraint violations.
    pub(crate) fn feasibility(problem: &'a OcpProblem) -> Self {
        Self::new(problem, false)
    }

    /// Objective plus augmented-Lagrangian penalty terms.
    pub(crate) fn augmented(problem: &'a OcpProblem) -> Self {
        Self::new(problem, true)
    }

    /// Sets penalty `rho`, equality multipliers `lambda` and inequality
    /// multipliers `mu` (for constraints written `g >= 0`).
    pub(crate) fn set_multipliers(&mut self, rho: f64, lambda: &[f64], mu: &[f64]) {
        let s = (0.5 * rho).sqrt();
        self.eq_scale = s;
        self.ineq_scale = s;
        for (sh, l) in self.eq_shift.iter_mut().zip(lambda) {
            *sh = l / rho;
        }
        for (sh, m) in self.ineq_shift.iter_mut().zip(mu) {
            *sh = -m / rho;
        }
    }

    pub(crate) fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    fn transform(&self, t: &Term, i: usize, v: f64) -> (f64, bool) {
        match t.kind {
            TermKind::Plain => (v, true),
            TermKind::Equality => (self.eq_scale * (v + self.eq_shift[t.mult + i]), true),
            TermKind::Inequality => {
                let w = v + self.ineq_shift[t.mult + i];
                if w < 0.0 {
                    (self.ineq_scale * w, true)
                } else {
                    (0.0, false)
                }
            }
        }
    }

    fn term_scale(&self, t: &Term) -> f64 {
        match t.kind {
            TermKind::Plain => 1.0,
            TermKind::Equality => self.eq_scale,
            TermKind::Inequality => self.ineq_scale,
        }
    }

    /// Fills `r`; returns false if any entry is not finite.
    pub(crate) fn residuals(&self, z: &[f64], r: &mut [f64]) -> bool {
        let mut buf = [0.0; crate::ocp::MAX_INPUTS];
        for t in &self.terms {
            let b = t.block;
            self.problem.block_value(b, z, &mut buf[..b.n_out]);
            for i in 0..b.n_out {
                r[t.row + i] = self.transform(t, i, buf[i]).0;
            }
        }
        r.iter().all(|v| v.is_finite())
    }

    /// Fills `r` and the Jacobian rows (inactive hinge rows are zero).
    pub(crate) fn jacobian(&self, z: &[f64], r: &mut [f64], jac: &mut [f64]) -> bool {
        let mut buf = [0.0; crate::ocp::MAX_INPUTS];
        for t in &self.terms {
            let b = t.block;
            let nv = b.vars.len();
            let rows = &mut jac[t.jac..t.jac + b.n_out * nv];
            self.problem.block_jacobian(b, z, &mut buf[..b.n_out], rows);
            let scale = self.term_scale(t);
            for i in 0..b.n_out {
                let (v, active) = self.transform(t, i, buf[i]);
                r[t.row + i] = v;
                let row = &mut rows[i * nv..(i + 1) * nv];
                if active {
                    row.iter_mut().for_each(|e| *e *= scale);
                } else {
                    row.iter_mut().for_each(|e| *e = 0.0);
                }
            }
        }
        r.iter().all(|v| v.is_finite()) && jac.iter().all(|v| v.is_finite())
    }
}

/// Ordering and scratch space tied to one problem structure.
pub(crate) struct Workspace {
    perm: Vec<usize>,
    band: BandMatrix,
    r: Vec<f64>,
    r_trial: Vec<f64>,
    jac: Vec<f64>,
    grad: Vec<f64>,
    step: Vec<f64>,
    diag_scale: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(model: &LsqModel) -> Self {
        let n = model.problem.n_vars;
        let groups: Vec<Vec<usize>> = model.terms.iter().map(|t| t.block.vars.clone()).collect();
        let perm = rcm_order(n, &groups);
        let bw = bandwidth(&groups, &perm);
        Workspace {
            perm,
            band: BandMatrix::zeros(n, bw),
            r: vec![0.0; model.n_rows()],
            r_trial: vec![0.0; model.n_rows()],
            jac: vec![0.0; model.n_jac],
            grad: vec![0.0; n],
            step: vec![0.0; n],
            diag_scale: vec![0.0; n],
        }
    }

    #[cfg(test)]
    pub(crate) fn bandwidth(&self) -> usize {
        self.band.bandwidth()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum LmStop {
    /// Residual norm reached the requested target.
    Target,
    /// Projected gradient below tolerance.
    Stationary,
    /// No further decrease could be obtained.
    Stalled,
    MaxIters,
    NonFinite,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LmOptions {
    pub max_iters: usize,
    /// Tolerance on the projected gradient of `0.5 * |r|^2`.
    pub gtol: f64,
    /// Stop once `|r|^2` falls below this.
    pub phi_target: f64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LmOutcome {
    pub iters: usize,
    pub proj_grad: f64,
    pub stop: LmStop,
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn fixed(z: f64, lo: f64, hi: f64, g: f64) -> bool {
    lo == hi || (z <= lo && g > 0.0) || (z >= hi && g < 0.0)
}

fn projected_gradient(z: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..z.len())
        .filter(|&i| lo[i] < hi[i])
        .map(|i| (z[i] - (z[i] - g[i]).clamp(lo[i], hi[i])).abs())
        .fold(0.0, f64::max)
}

impl LsqModel<'_> {
    fn gradient(&self, jac: &[f64], r: &[f64], g: &mut [f64]) {
        g.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.terms {
            let b = t.block;
            let nv = b.vars.len();
            for i in 0..b.n_out {
                let ri = r[t.row + i];
                if ri == 0.0 {
                    continue;
                }
                let row = &jac[t.jac + i * nv..t.jac + (i + 1) * nv];
                for (c, &var) in b.vars.iter().enumerate() {
                    g[var] += row[c] * ri;
                }
            }
        }
    }

    fn normal_matrix(&self, jac: &[f64], perm: &[usize], band: &mut BandMatrix) {
        band.clear();
        for t in &self.terms {
            let b = t.block;
            let nv = b.vars.len();
            for i in 0..b.n_out {
                let row = &jac[t.jac + i * nv..t.jac + (i + 1) * nv];
                for a in 0..nv {
                    if row[a] == 0.0 {
                        continue;
                    }
                    let pa = perm[b.vars[a]];
                    for c in 0..=a {
                        band.add(pa, perm[b.vars[c]], row[a] * row[c]);
                    }
                }
            }
        }
    }

    /// `|J s|^2` for a step `s` in original variable order.
    fn jac_step_sq(&self, jac: &[f64], s: &[f64]) -> f64 {
        let mut acc = 0.0;
        for t in &self.terms {
            let b = t.block;
            let nv = b.vars.len();
            for i in 0..b.n_out {
                let row = &jac[t.jac + i * nv..t.jac + (i + 1) * nv];
                let v: f64 = row.iter().zip(&b.vars).map(|(j, &var)| j * s[var]).sum();
                acc += v * v;
            }
        }
        acc
    }
}

/// Minimizes `|r(z)|^2` over `lower <= z <= upper` starting from `z`, which
/// must already lie in the box. `z` is left at the best point found.
pub(crate) fn minimize(
    model: &LsqModel,
    ws: &mut Workspace,
    z: &mut [f64],
    lower: &[f64],
    upper: &[f64],
    opts: LmOptions,
) -> LmOutcome {
    let n = z.len();
    let mut trial = z.to_vec();
    if !model.jacobian(z, &mut ws.r, &mut ws.jac) {
        return LmOutcome {
            iters: 0,
            proj_grad: f64::NAN,
            stop: LmStop::NonFinite,
        };
    }
    let mut phi = sq(&ws.r);
    model.gradient(&ws.jac, &ws.r, &mut ws.grad);
    let mut pg = projected_gradient(z, &ws.grad, lower, upper);
    let mut mu = 1e-3;
    let mut nu = 2.0;
    let mut slow = 0;
    ws.diag_scale.iter_mut().for_each(|d| *d = 0.0);

    let mut iters = 0;
    let stop = loop {
        if phi <= opts.phi_target {
            break LmStop::Target;
        }
        if pg <= opts.gtol {
            break LmStop::Stationary;
        }
        if iters >= opts.max_iters {
            break LmStop::MaxIters;
        }
        iters += 1;

        model.normal_matrix(&ws.jac, &ws.perm, &mut ws.band);
        let base = ws.band.clone();
        for v in 0..n {
            let p = ws.perm[v];
            ws.diag_scale[v] = ws.diag_scale[v].max(base.get(p, p)).max(1e-12);
        }
        let mut accepted = false;
        let mut gave_up = false;
        for _ in 0..40 {
            ws.band.clone_from(&base);
            let mut rhs = vec![0.0; n];
            for v in 0..n {
                let p = ws.perm[v];
                if fixed(z[v], lower[v], upper[v], ws.grad[v]) {
                    ws.band.pin(p);
                } else {
                    ws.band.add(p, p, mu * ws.diag_scale[v]);
                    rhs[p] = -ws.grad[v];
                }
            }
            if !ws.band.factor() {
                mu *= 10.0;
                continue;
            }
            ws.band.solve(&mut rhs);
            let mut step_norm = 0.0f64;
            for v in 0..n {
                trial[v] = (z[v] + rhs[ws.perm[v]]).clamp(lower[v], upper[v]);
                ws.step[v] = trial[v] - z[v];
                step_norm = step_norm.max(ws.step[v].abs());
            }
            let z_norm = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if step_norm <= 1e-15 * (1.0 + z_norm) {
                gave_up = true;
                break;
            }
            let pred = -2.0 * ws.grad.iter().zip(&ws.step).map(|(g, s)| g * s).sum::<f64>()
                - model.jac_step_sq(&ws.jac, &ws.step);
            let ok = model.residuals(&trial, &mut ws.r_trial);
            let phi_trial = sq(&ws.r_trial);
            let ratio = if pred > 0.0 {
                (phi - phi_trial) / pred
            } else {
                -1.0
            };
            if ok && phi_trial.is_finite() && phi_trial < phi && ratio > 1e-4 {
                let rel = (phi - phi_trial) / phi.max(f64::MIN_POSITIVE);
                slow = if rel < 1e-9 { slow + 1 } else { 0 };
                z.copy_from_slice(&trial);
                mu *= (1.0 - (2.0 * ratio - 1.0).powi(3)).max(1.0 / 3.0);
                mu = mu.max(1e-12);
                nu = 2.0;
                accepted = true;
                break;
            }
            mu *= nu;
            nu *= 2.0;
            if mu > 1e16 {
                gave_up = true;
                break;
            }
        }
        if !accepted || gave_up {
            break LmStop::Stalled;
        }
        if !model.jacobian(z, &mut ws.r, &mut ws.jac) {
            break LmStop::NonFinite;
        }
        phi = sq(&ws.r);
        model.gradient(&ws.jac, &ws.r, &mut ws.grad);
        pg = projected_gradient(z, &ws.grad, lower, upper);
        if slow >= 5 {
            break LmStop::Stalled;
        }
    };
    LmOutcome {
        iters,
        proj_grad: pg,
        stop,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Plant;
    use crate::ocp::{build_problem, CostSpec, FormulationParams, Reference, Variant, WarmStart};
    use crate::safety::SafetySpec;

    #[test]
    fn feasibility_residual_is_zero_on_rollouts() {
        let p = Plant::by_name("unicycle5d").unwrap();
        let s = SafetySpec::for_plant(&p);
        let pb = build_problem(
            &p,
            &s,
            &CostSpec::default(),
            &FormulationParams::new(Variant::MpcMci, 6),
            &[2.0, 1.0, 0.0, 0.5, 0.0],
            0.0,
        )
        .unwrap();
        let model = LsqModel::feasibility(&pb);
        let z = WarmStart::recovery(&pb).values;
        let mut r = vec![0.0; model.n_rows()];
        assert!(model.residuals(&z, &mut r));
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stage_structure_gives_narrow_band() {
        let p = Plant::by_name("unicycle5d").unwrap();
        let s = SafetySpec::for_plant(&p);
        let cost = CostSpec {
            reference: Some(Reference::Fixed(vec![1.0, 1.0])),
            ..CostSpec::default()
        };
        let params = FormulationParams::new(Variant::NmpcDcbf, 30).with_slack(true);
        let pb = build_problem(&p, &s, &cost, &params, &[-2.0, -2.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        let model = LsqModel::augmented(&pb);
        let ws = Workspace::new(&model);
        assert!(ws.bandwidth() <= 24, "bandwidth {}", ws.bandwidth());
    }
}
