use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpc-mci")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn appendix_prints_the_verdict_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["appendix", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("no speed bound: mpc-mci feasible"), "{text}");
    assert!(text.contains("dtcbf-mpc infeasible"), "{text}");
    assert!(text.contains("h(x2) = 0.7500"), "{text}");
    let csv = fs::read_to_string(dir.path().join("appendix.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("speed_limit,formulation,verdict,status,max_violation,u0"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn zero_grid_count_is_a_validation_error_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "command = \"feasibility\"\n[grid]\nnx = 0\n");
    let out_dir = dir.path().join("out");
    let out = run(&["--config", &cfg, "--output-dir", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("grid counts"), "{}", stderr(&out));
    assert!(!out_dir.exists());
}

#[test]
fn unknown_keys_and_identifiers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[tracking]\nhorizonn = 3\n");
    let out = run(&["track", "--config", &cfg]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("horizonn"), "{}", stderr(&out));

    assert_eq!(code(&run(&["feasibility", "--variant", "mpc-xyz"])), 1);
    assert_eq!(code(&run(&["check", "--plant", "quadrotor"])), 1);
    assert_eq!(code(&run(&["feasibility", "--case", "3"])), 1);
    assert_eq!(code(&run(&[])), 1);
}

#[test]
fn colliding_start_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["track", "--x0", "0.5,0,0,0,0", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn feasibility_output_is_byte_identical_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "command = \"feasibility\"\ncase = 2\n[grid]\nnx = 9\nny = 5\n");
    let name = "feasibility_case2_mpc-mci";
    let mut outputs = Vec::new();
    for (sub, jobs) in [("a", "1"), ("b", "2")] {
        let d = dir.path().join(sub);
        let out = run(&[
            "--config",
            &cfg,
            "--nx",
            "6",
            "--horizons",
            "2,11",
            "--jobs",
            jobs,
            "--output-dir",
            d.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        outputs.push(fs::read(d.join(format!("{name}.csv"))).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.pop().unwrap()).unwrap();
    assert_eq!(text.lines().next(), Some("case,variant,N,ix,iy,x,y,verdict,max_violation,solve_ms"));
    assert_eq!(text.lines().count(), 1 + 2 * 6 * 5);

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("b").join(format!("{name}.summary.json"))).unwrap())
            .unwrap();
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    assert!(summary["artifacts"][0].as_str().unwrap().ends_with(&format!("{name}.csv")));
    assert_eq!(summary["results"]["horizons"].as_array().unwrap().len(), 2);
    assert_eq!(summary["config"]["grid"]["fixed_v"], 1.5);
}

#[test]
fn check_passes_and_reports_violations_with_exit_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path(), "[check]\nsamples = 500\nderivative_points = 4\n");
    let out = run(&["check", "--config", &cfg, "--output-dir", d]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let csv = fs::read_to_string(dir.path().join("check_descent.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x0,x1,x2,x3,x4,h_before,h_after,d,violation_flag"));
    assert_eq!(csv.lines().count(), 501);

    let strict = write_config(dir.path(), "[check]\nsamples = 10\nderivative_points = 4\nderivative_tolerance = 1e-300\n");
    let out = run(&["check", "--config", &strict, "--output-dir", d]);
    assert_eq!(code(&out), 3, "{}", stdout(&out));
}

#[test]
fn short_tracking_and_reach_runs_write_their_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = run(&["track", "--duration", "0.5", "--x0", "-2,-2,0,0,0", "--output-dir", d]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("track_mpc-mci_N30.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("t,x,y,theta,v,omega,a,alpha,status,h,d,ref_x,ref_y,err"));
    assert_eq!(csv.lines().count(), 2 + 11);

    let out = run(&["reach", "--nx", "3", "--ny", "3", "--x0", "2.4,2.4,0,0,0", "--output-dir", d]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("reach.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8 * 9);
}

#[test]
fn unwritable_output_dir_is_a_driver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = run(&["appendix", "--output-dir", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}
