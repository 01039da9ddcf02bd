mod common;

use mpc_mci::analysis::{
    feasibility_grid, reachability_probe, run_receding_horizon, GridSpec, ProbeCase, TrackingConfig, Verdict,
};
use mpc_mci::{Execution, Plant, SafetySpec, SolverConfig, Variant};

fn unicycle() -> (Plant, SafetySpec) {
    let p = Plant::by_name("unicycle5d").unwrap();
    let s = SafetySpec::for_plant(&p);
    (p, s)
}

fn small_grid(case: u8, variant: Variant, n: usize) -> GridSpec {
    GridSpec::case(case).unwrap().with_variant(variant).with_resolution(n, n)
}

#[test]
fn mci_verdicts_are_monotone_in_horizon_and_dominate_nmpc() {
    let (p, s) = unicycle();
    let cfg = SolverConfig::default();
    for case in [1, 2] {
        let mci = feasibility_grid(&p, &s, &small_grid(case, Variant::MpcMci, 30), &cfg).unwrap();
        let nmpc = feasibility_grid(&p, &s, &small_grid(case, Variant::NmpcDcbf, 30), &cfg).unwrap();
        let hs = &mci.spec.horizons;
        for w in hs.windows(2) {
            let (a, b) = (mci.bitmap(w[0]).unwrap(), mci.bitmap(w[1]).unwrap());
            let broken = a.iter().zip(&b).filter(|(x, y)| **x && !**y).count();
            assert_eq!(broken, 0, "case {case}: feasible at N={} but not N={}", w[0], w[1]);
        }
        let first = nmpc.bitmap(hs[0]).unwrap();
        for &n in hs {
            assert_eq!(nmpc.bitmap(n).unwrap(), first, "case {case}: NMPC bitmap changes at N={n}");
            let dominated = mci.bitmap(2).unwrap();
            let bad = nmpc.bitmap(n).unwrap().iter().zip(&dominated).filter(|(x, y)| **x && !**y).count();
            assert_eq!(bad, 0, "case {case}: NMPC N={n} feasible where MCI N=2 is not");
        }
        assert!(mci.summary().iter().all(|s| s.failures == 0));
    }
}

#[test]
fn grid_verdicts_agree_with_brute_force_rollouts() {
    let (p, s) = unicycle();
    for case in [1, 2] {
        let spec = small_grid(case, Variant::MpcMci, 24).with_horizons(&[6, 21]);
        let res = feasibility_grid(&p, &s, &spec, &SolverConfig::default()).unwrap();
        for (h, &n) in spec.horizons.iter().enumerate() {
            let mut proven = 0;
            for (pt, cell) in res.points.iter().zip(&res.cells[h]) {
                let x0 = [pt.x, pt.y, spec.fixed_theta, spec.fixed_v, spec.fixed_omega];
                if common::brute_force_mci(x0, n) {
                    proven += 1;
                    assert_eq!(
                        cell.verdict,
                        Verdict::Feasible,
                        "case {case} N={n} ({}, {}): rollout witness exists",
                        pt.x,
                        pt.y
                    );
                }
            }
            let feasible = res.cells[h].iter().filter(|c| c.verdict == Verdict::Feasible).count();
            // the coarse search should certify most of what the solver finds
            assert!(proven as f64 >= 0.9 * feasible as f64, "case {case} N={n}: {proven} of {feasible}");
        }
    }
}

#[test]
fn nmpc_verdicts_match_the_one_step_oracle() {
    let (p, s) = unicycle();
    for case in [1, 2] {
        let spec = small_grid(case, Variant::NmpcDcbf, 40).with_horizons(&[2]);
        let res = feasibility_grid(&p, &s, &spec, &SolverConfig::default()).unwrap();
        for (pt, cell) in res.points.iter().zip(&res.cells[0]) {
            let x0 = [pt.x, pt.y, spec.fixed_theta, spec.fixed_v, spec.fixed_omega];
            if common::dist(&x0) < 0.0 {
                assert_eq!(cell.verdict, Verdict::Infeasible);
                continue;
            }
            let best = common::best_next_barrier(x0);
            if best.abs() < 1e-6 {
                continue;
            }
            assert_eq!(cell.verdict == Verdict::Feasible, best > 0.0, "({}, {}) best h {best}", pt.x, pt.y);
        }
    }
}

#[test]
fn grid_output_is_deterministic_across_execution_modes() {
    let (p, s) = unicycle();
    let base = small_grid(2, Variant::MpcMci, 12).with_horizons(&[11, 2]);
    let mut seq = base.clone();
    seq.execution = Execution::Sequential;
    let cfg = SolverConfig::default();
    let a = feasibility_grid(&p, &s, &base, &cfg).unwrap();
    let b = feasibility_grid(&p, &s, &seq, &cfg).unwrap();
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv("2", &mut ca).unwrap();
    b.write_csv("2", &mut cb).unwrap();
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("case,variant,N,ix,iy,x,y,verdict,max_violation,solve_ms"));
    // horizons reported in the order requested
    assert!(lines.next().unwrap().starts_with("2,mpc-mci,11,0,0,-2.5,-2.5,"));
    assert_eq!(text.lines().count(), 1 + 2 * 144);
}

#[test]
fn grid_rejects_bad_specs() {
    let (p, s) = unicycle();
    let cfg = SolverConfig::default();
    for spec in [
        small_grid(1, Variant::MpcMci, 0),
        GridSpec::default().with_horizons(&[]),
        GridSpec::default().with_horizons(&[0, 2]),
        GridSpec {
            x_range: [1.0, -1.0],
            ..GridSpec::default()
        },
    ] {
        assert!(feasibility_grid(&p, &s, &spec, &cfg).is_err());
    }
    assert!(GridSpec::case(3).is_err());
}

#[test]
fn zero_duration_run_logs_only_the_initial_state() {
    let (p, s) = unicycle();
    let cfg = TrackingConfig::default().with_duration(0.0);
    let log = run_receding_horizon(&p, &s, &cfg, &SolverConfig::default()).unwrap();
    assert_eq!(log.rows.len(), 1);
    assert_eq!(log.rows[0].state, cfg.x0);
    assert_eq!(log.rows[0].t, 0.0);
}

#[test]
fn nmpc_without_slack_stays_in_the_safe_set() {
    let (p, s) = unicycle();
    let mut cfg = TrackingConfig::default()
        .with_variant(Variant::NmpcDcbf)
        .with_horizon(15)
        .with_duration(4.0);
    cfg.slack = false;
    let log = run_receding_horizon(&p, &s, &cfg, &SolverConfig::default()).unwrap();
    assert_eq!(log.rows.len(), 81);
    assert!(log.min_barrier() >= -1e-6, "{}", log.min_barrier());
    let times_uniform = log.rows.windows(2).all(|w| (w[1].t - w[0].t - 0.05).abs() < 1e-9);
    assert!(times_uniform);
}

#[test]
fn mci_run_enters_negative_barrier_without_collision() {
    let (p, s) = unicycle();
    let cfg = TrackingConfig::default().with_duration(3.0);
    let log = run_receding_horizon(&p, &s, &cfg, &SolverConfig::default()).unwrap();
    assert!(log.min_distance() >= -1e-6);
    assert!(log.min_barrier() < 0.0);
    assert_eq!(log.fallback_count(), 0);
    let mut out = Vec::new();
    log.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("# variant=mpc-mci N=30"));
    assert_eq!(text.lines().nth(1), Some("t,x,y,theta,v,omega,a,alpha,status,h,d,ref_x,ref_y,err"));
    assert_eq!(text.lines().count(), 2 + 61);
}

#[test]
fn tracking_rejects_colliding_start_and_bad_config() {
    let (p, s) = unicycle();
    let mut cfg = TrackingConfig::default();
    cfg.x0 = vec![0.5, 0.0, 0.0, 0.0, 0.0];
    assert!(run_receding_horizon(&p, &s, &cfg, &SolverConfig::default()).is_err());
    let cfg = TrackingConfig {
        r_r: 0.0,
        ..TrackingConfig::default()
    };
    assert!(run_receding_horizon(&p, &s, &cfg, &SolverConfig::default()).is_err());
}

#[test]
fn remote_state_reaches_everything() {
    let (p, s) = unicycle();
    let r = reachability_probe(
        &p,
        &s,
        &[2.4, 2.4, 0.0, 0.0, 0.0],
        &[ProbeCase::mci(1)],
        [11, 11],
        &SolverConfig::default(),
        Execution::default(),
    )
    .unwrap();
    assert!(r.bitmap(ProbeCase::mci(1)).unwrap().iter().all(|&b| b));
    let mut out = Vec::new();
    r.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().next(), Some("N,M,iu1,iu2,u1,u2,x1_0,x1_1,x1_2,x1_3,x1_4,member"));
    assert_eq!(text.lines().count(), 122);
}

#[test]
fn head_on_state_has_nested_reachable_sets() {
    let (p, s) = unicycle();
    let cases = [
        ProbeCase::mci(2),
        ProbeCase::mci(6),
        ProbeCase::nmpc(1, 1),
        ProbeCase::nmpc(6, 6),
        ProbeCase::nmpc(11, 11),
    ];
    let r = reachability_probe(
        &p,
        &s,
        &[-1.5, 0.0, 0.0, 1.0, 0.0],
        &cases,
        [11, 11],
        &SolverConfig::default(),
        Execution::default(),
    )
    .unwrap();
    assert!(r.difference(cases[0], cases[1]).unwrap().is_empty());
    let nm = r.bitmap(cases[2]).unwrap();
    assert_eq!(r.bitmap(cases[3]).unwrap(), nm);
    assert_eq!(r.bitmap(cases[4]).unwrap(), nm);
    assert_eq!(r.failures(), 0);
}

#[test]
fn probe_rejects_colliding_start() {
    let (p, s) = unicycle();
    let res = reachability_probe(
        &p,
        &s,
        &[0.0, 0.5, 0.0, 0.0, 0.0],
        &[ProbeCase::mci(1)],
        [3, 3],
        &SolverConfig::default(),
        Execution::Sequential,
    );
    assert!(res.is_err());
}
