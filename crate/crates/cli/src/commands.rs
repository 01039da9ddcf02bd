//! One function per subcommand. Each validates first, so a rejected config
//! leaves no artifacts, then runs its driver and writes CSV plus a summary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use mpc_mci::analysis::{
    appendix_example, feasibility_grid, reachability_probe, run_receding_horizon, AppendixSide,
};
use mpc_mci::safety::{check_cbf_descent, check_compatibility, CbfCheckReport, SampleRegion};
use mpc_mci::{
    build_problem, check_derivatives, CostSpec, Execution, FormulationParams, PlantKind, SafetySpec, Variant,
};

use crate::config::RunConfig;

#[derive(Debug)]
pub enum Failure {
    /// Bad configuration; exit code 1.
    Validation(String),
    /// The driver or artifact writing failed; exit code 2.
    Driver(String),
}

impl From<mpc_mci::Error> for Failure {
    // every library error is a rejected input
    fn from(e: mpc_mci::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Driver(e.to_string())
    }
}

pub struct Outcome {
    /// A property sweep found a violation (exit code 3).
    pub check_failed: bool,
}

struct Artifacts<'a> {
    cfg: &'a RunConfig,
    written: Vec<PathBuf>,
}

impl<'a> Artifacts<'a> {
    fn new(cfg: &'a RunConfig) -> Self {
        Artifacts { cfg, written: Vec::new() }
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), Failure> {
        fs::create_dir_all(&self.cfg.output_dir)
            .map_err(|e| Failure::Driver(format!("cannot create {}: {e}", self.cfg.output_dir.display())))?;
        let path = self.cfg.output_dir.join(name);
        let mut w = BufWriter::new(
            File::create(&path).map_err(|e| Failure::Driver(format!("cannot write {}: {e}", path.display())))?,
        );
        f(&mut w)?;
        w.flush()?;
        self.written.push(path);
        Ok(())
    }

    /// Writes `<stem>.summary.json` naming the config hash and every
    /// artifact written so far.
    fn finish(mut self, stem: &str, results: Value) -> Result<PathBuf, Failure> {
        let doc = json!({
            "command": self.cfg.command().as_str(),
            "config_hash": self.cfg.hash(),
            "artifacts": self.written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "results": results,
            "config": self.cfg,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Driver(e.to_string()))?;
        let name = format!("{stem}.summary.json");
        self.write(&name, |w| writeln!(w, "{text}"))?;
        Ok(self.written.pop().expect("summary was just written"))
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn print_written(summary: &Path) {
    println!("summary: {}", summary.display());
}

pub fn feasibility(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let plant = cfg.plant().map_err(invalid)?;
    if plant.kind != PlantKind::Unicycle {
        return Err(invalid(format!("feasibility grids need the unicycle plant, got `{}`", cfg.plant)));
    }
    cfg.solver.validate()?;
    cfg.grid.validate()?;
    let safety = SafetySpec::for_plant(&plant);
    let result = Execution::Parallel.with_jobs(cfg.jobs, || feasibility_grid(&plant, &safety, &cfg.grid, &cfg.solver))?;

    let label = cfg.case.map_or_else(|| "custom".to_string(), |c| c.to_string());
    let stem = format!("feasibility_case{label}_{}", cfg.grid.variant);
    let mut out = Artifacts::new(cfg);
    out.write(&format!("{stem}.csv"), |w| result.write_csv(&label, w))?;
    let summary = result.summary();
    for s in &summary {
        println!(
            "{} N={:<3} feasible {:>6}/{:<6} fraction {:.4}  infeasible {}  failures {}",
            cfg.grid.variant, s.horizon, s.feasible, s.total, s.feasible_fraction, s.infeasible_count, s.failures
        );
    }
    let path = out.finish(&stem, json!({ "case": label, "horizons": summary }))?;
    print_written(&path);
    Ok(Outcome { check_failed: false })
}

pub fn track(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let plant = cfg.plant().map_err(invalid)?;
    cfg.solver.validate()?;
    cfg.tracking.validate(&plant)?;
    let safety = SafetySpec::for_plant(&plant);
    let d0 = safety.distance(&cfg.tracking.x0);
    if d0 < 0.0 {
        return Err(invalid(format!("initial state is in collision (signed distance {d0:.6})")));
    }
    let log = run_receding_horizon(&plant, &safety, &cfg.tracking, &cfg.solver)?;

    let t = &cfg.tracking;
    let stem = format!("track_{}_N{}", t.variant, t.horizon);
    let mut out = Artifacts::new(cfg);
    out.write(&format!("{stem}.csv"), |w| log.write_csv(w))?;
    // the last full reference period, or the whole run if shorter
    let from = (t.duration - t.t_r).max(0.0);
    let results = json!({
        "steps": log.rows.len() - 1,
        "mean_error_from": from,
        "mean_error": log.mean_error_since(from),
        "min_distance": log.min_distance(),
        "min_barrier": log.min_barrier(),
        "fallbacks": log.fallback_count(),
    });
    println!(
        "{} N={} steps {}  mean error (t >= {from}) {:.4}  min d {:.3e}  min h {:.4}  fallbacks {}",
        t.variant,
        t.horizon,
        log.rows.len() - 1,
        log.mean_error_since(from),
        log.min_distance(),
        log.min_barrier(),
        log.fallback_count()
    );
    let path = out.finish(&stem, results)?;
    print_written(&path);
    Ok(Outcome { check_failed: false })
}

pub fn reach(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let plant = cfg.plant().map_err(invalid)?;
    cfg.solver.validate()?;
    let r = &cfg.reach;
    if r.cases.is_empty() {
        return Err(invalid("reach.cases is empty"));
    }
    let safety = SafetySpec::for_plant(&plant);
    let report = Execution::Parallel.with_jobs(cfg.jobs, || {
        reachability_probe(&plant, &safety, &r.x0, &r.cases, r.grid, &cfg.solver, Execution::Parallel)
    })?;

    let mut out = Artifacts::new(cfg);
    out.write("reach.csv", |w| report.write_csv(w))?;
    let members: Vec<Value> = r
        .cases
        .iter()
        .map(|c| {
            let n = report.bitmap(*c).expect("probed case").iter().filter(|b| **b).count();
            println!("{} N={} M={}  members {n}/{}", c.variant, c.horizon, c.m_cbf, report.controls.len());
            json!({ "variant": c.variant, "N": c.horizon, "M": c.m_cbf, "members": n })
        })
        .collect();
    let results = json!({
        "controls": report.controls.len(),
        "cases": members,
        "failures": report.failures(),
    });
    let path = out.finish("reach", results)?;
    print_written(&path);
    Ok(Outcome { check_failed: false })
}

fn side_row(w: &mut dyn Write, limit: Option<f64>, name: &str, s: &AppendixSide) -> std::io::Result<()> {
    writeln!(
        w,
        "{},{name},{},{},{},{}",
        limit.map_or_else(String::new, |l| l.to_string()),
        s.verdict.as_str(),
        s.status.as_str(),
        s.max_violation,
        s.u0.map_or_else(String::new, |u| u.to_string())
    )
}

pub fn appendix(cfg: &RunConfig) -> Result<Outcome, Failure> {
    cfg.solver.validate()?;
    let r = appendix_example(&cfg.solver)?;
    println!(
        "witness u = ({}, {}): x1 = {:.4}, v1 = {:.4}, x2 = {:.4}, d(x1) = {:.4}, h(x2) = {:.4}",
        r.witness_controls[0],
        r.witness_controls[1],
        r.witness_states[0][0],
        r.witness_states[0][1],
        r.witness_states[1][0],
        r.witness_distance,
        r.witness_barrier
    );
    println!(
        "CBF at x1 needs u0/2 >= {:.4} but u_max = {} (best x1 margin {:.4})",
        r.required_half_u0, r.u_max, r.x1_margin
    );
    for c in [&r.without_speed_limit, &r.with_speed_limit] {
        let label = c.speed_limit.map_or_else(|| "no speed bound".to_string(), |l| format!("|v| <= {l}"));
        println!(
            "{label}: mpc-mci {} ({}), dtcbf-mpc {} ({}, violation {:.4})",
            c.mci.verdict.as_str(),
            c.mci.status,
            c.dtcbf.verdict.as_str(),
            c.dtcbf.status,
            c.dtcbf.max_violation
        );
    }
    let mut out = Artifacts::new(cfg);
    out.write("appendix.csv", |w| {
        writeln!(w, "speed_limit,formulation,verdict,status,max_violation,u0")?;
        for c in [&r.without_speed_limit, &r.with_speed_limit] {
            side_row(w, c.speed_limit, "mpc-mci", &c.mci)?;
            side_row(w, c.speed_limit, "dtcbf-mpc", &c.dtcbf)?;
        }
        Ok(())
    })?;
    let results = serde_json::to_value(&r).map_err(|e| Failure::Driver(e.to_string()))?;
    let path = out.finish("appendix", results)?;
    print_written(&path);
    Ok(Outcome { check_failed: false })
}

fn sweep_json(r: &CbfCheckReport) -> Value {
    json!({
        "samples": r.samples_tested,
        "violations": r.violations.len(),
        "max_violation": r.max_descent_violation,
        "tolerance": r.tolerance,
    })
}

pub fn check(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let plant = cfg.plant().map_err(invalid)?;
    cfg.solver.validate()?;
    let c = &cfg.check;
    if c.samples == 0 || !(c.tolerance >= 0.0) || !(c.derivative_tolerance > 0.0) || c.derivative_horizon < 2 {
        return Err(invalid("check needs samples >= 1, tolerances >= 0 and derivative_horizon >= 2"));
    }
    let safety = SafetySpec::for_plant(&plant);
    let region = SampleRegion::for_plant(&plant);
    let states = region.sample(c.samples, cfg.seed);
    let (descent, compat) = Execution::Parallel.with_jobs(cfg.jobs, || {
        let d = check_cbf_descent(&safety, &plant, &states, c.tolerance, Execution::Parallel);
        (d, check_compatibility(&safety, &states, c.tolerance, Execution::Parallel))
    });
    let descent = descent?;

    // derivative checks at random iterates of random problems, cycling
    // through the formulations
    let mut worst = 0.0f64;
    let candidates = region.sample(50 * c.derivative_points.max(1), cfg.seed.wrapping_add(1));
    let mut starts = candidates.iter().filter(|x| safety.distance(x) >= 0.0);
    for i in 0..c.derivative_points {
        let Some(x0) = starts.next() else { break };
        let variant = Variant::ALL[i % Variant::ALL.len()];
        let params = FormulationParams::new(variant, c.derivative_horizon).with_slack(variant == Variant::NmpcDcbf);
        let problem = build_problem(&plant, &safety, &CostSpec::default(), &params, x0, 0.0)?;
        let z = SampleRegion {
            ranges: vec![[-2.0, 2.0]; problem.n_vars],
        }
        .sample(1, cfg.seed.wrapping_add(2 + i as u64))
        .remove(0);
        worst = worst.max(check_derivatives(&problem, &z, cfg.solver.fd_step)?.max_rel_error);
    }

    let mut out = Artifacts::new(cfg);
    out.write("check_descent.csv", |w| descent.write_csv(w))?;
    out.write("check_compatibility.csv", |w| compat.write_csv(w))?;
    let derivatives_ok = worst <= c.derivative_tolerance;
    let passed = descent.passed() && compat.passed() && derivatives_ok;
    println!(
        "descent: {} violations in {} samples (max {:.3e})",
        descent.violations.len(),
        descent.samples_tested,
        descent.max_descent_violation
    );
    println!(
        "compatibility: {} violations in {} samples (max {:.3e})",
        compat.violations.len(),
        compat.samples_tested,
        compat.max_descent_violation
    );
    println!("derivatives: max relative error {worst:.3e} over {} points", c.derivative_points);
    println!("{}", if passed { "all checks passed" } else { "CHECK FAILED" });
    let results = json!({
        "descent": sweep_json(&descent),
        "compatibility": sweep_json(&compat),
        "derivatives": { "points": c.derivative_points, "max_rel_error": worst, "tolerance": c.derivative_tolerance },
        "passed": passed,
    });
    let path = out.finish("check", results)?;
    print_written(&path);
    Ok(Outcome { check_failed: !passed })
}
