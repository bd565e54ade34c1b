use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}"))
}

fn nlococ(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlococ"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    let out = dir.to_str().unwrap();
    all.extend(["--out", out]);
    nlococ(&all)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_accepts_shipped_scenarios() {
    for name in ["default.scn", "fixedpoint.scn"] {
        let o = nlococ(&["validate", path_str(&scenario(name))]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("scenario valid"));
    }
}

#[test]
fn invalid_scenario_exits_one_with_labels() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("default.scn"))
        .unwrap()
        .replacen("tau = 0.5", "tau = 0.0", 1);
    let p = dir.path().join("bad.scn");
    std::fs::write(&p, text).unwrap();
    let o = nlococ(&["validate", path_str(&p)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("A1"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    let o = nlococ(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let o = nlococ(&["simulate", path_str(&scenario("fixedpoint.scn")), "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    let o = nlococ(&[]);
    assert_eq!(o.status.code(), Some(1));
    let o = nlococ(&[
        "simulate",
        path_str(&scenario("fixedpoint.scn")),
        "--format",
        "xml",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let o = nlococ(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("taylor-test"));
}

#[test]
fn missing_scenario_is_a_runtime_failure() {
    let o = nlococ(&["simulate", "/nonexistent/none.scn"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_nlococ"))
        .args(["validate", path_str(&scenario("fixedpoint.scn"))])
        .env("NLOCOC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_fixed_point_keeps_mass_ledger_closed() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &["simulate", path_str(&scenario("fixedpoint.scn"))],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for name in ["phi", "mu", "sigma"] {
        assert!(dir.path().join(format!("trajectory/{name}.raw64")).exists());
    }
    let monitors = std::fs::read_to_string(dir.path().join("monitors.csv")).unwrap();
    let mut lines = monitors.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "mass_defect").unwrap();
    let rows: Vec<f64> = lines
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|d| d.abs() <= 1e-12), "{rows:?}");
}

#[test]
fn csv_export_writes_one_file_per_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &[
            "simulate",
            path_str(&scenario("fixedpoint.scn")),
            "--format",
            "csv",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let traj = dir.path().join("trajectory");
    assert_eq!(std::fs::read_dir(&traj).unwrap().count(), 3 * 11);
    let first = std::fs::read_to_string(traj.join("phi_00000.csv")).unwrap();
    assert!(first.starts_with("x,y,value\n"));
    assert_eq!(first.lines().count(), 16 * 16 + 1);
}

fn random_scenario(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(scenario("fixedpoint.scn"))
        .unwrap()
        .replacen(
            "phi = -0.5",
            "phi = { preset = \"random\", mean = -0.5, amplitude = 0.05 }",
            1,
        );
    let p = dir.join("random.scn");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn outputs_are_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let scn = random_scenario(dir.path());
    let mut phi = Vec::new();
    for (tag, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        let out = dir.path().join(tag);
        let o = run_in(&out, &["simulate", path_str(&scn), "--seed", seed]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        phi.push(std::fs::read(out.join("trajectory/phi.raw64")).unwrap());
    }
    assert_eq!(phi[0], phi[1]);
    assert_ne!(phi[0], phi[2]);
}

#[test]
fn energy_report_has_a_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &["energy-report", path_str(&scenario("fixedpoint.scn"))],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("energy_report.csv")).unwrap();
    assert_eq!(text.lines().count(), 12);
    assert!(text.starts_with("step,time,energy,energy_residual"));
}

#[test]
fn taylor_test_reports_second_order() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &["taylor-test", path_str(&scenario("default.scn"))],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let slope: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("fitted slope = "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((1.9..=2.1).contains(&slope), "{text}");
}

#[test]
fn gradient_check_agrees_with_differences() {
    let dir = tempfile::tempdir().unwrap();
    let scn = random_scenario(dir.path());
    let o = run_in(
        dir.path(),
        &["gradient-check", path_str(&scn), "--directions", "1"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("gradient_check.csv")).unwrap();
    let errs: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert_eq!(errs.len(), 5);
    assert!(errs.iter().any(|e| *e <= 1e-6), "{errs:?}");
}

#[test]
fn optimize_writes_feasible_controls() {
    let dir = tempfile::tempdir().unwrap();
    let scn = random_scenario(dir.path());
    let o = run_in(dir.path(), &["optimize", path_str(&scn), "--samples", "10"]);
    assert_eq!(o.status.code(), Some(0), "{}\n{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("converged: true"));
    for name in ["u.raw64", "v.raw64", "history.csv", "trajectory/phi.raw64"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}
