use std::path::{Path, PathBuf};

use nlococ::{Error, Scenario};

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn default_text() -> String {
    std::fs::read_to_string(scenarios().join("default.scn")).unwrap()
}

fn parse(text: &str) -> Result<Scenario, Error> {
    Scenario::parse(text, &scenarios(), None)
}

fn edited(from: &str, to: &str) -> String {
    let text = default_text();
    assert!(text.contains(from), "`{from}` not in default scenario");
    text.replacen(from, to, 1)
}

/// `"A5/B3: ..."` carries both labels.
fn has_label(msg: &str, label: &str) -> bool {
    msg.split_once(':')
        .is_some_and(|(head, _)| head.split('/').any(|l| l == label))
}

fn rejected_with(text: &str, label: &str) -> Vec<String> {
    match parse(text) {
        Err(Error::Validation(msgs)) => {
            assert!(
                msgs.iter().any(|m| has_label(m, label)),
                "expected {label} in {msgs:?}"
            );
            msgs
        }
        other => panic!("expected validation failure {label}, got {other:?}"),
    }
}

#[test]
fn shipped_scenarios_pass_every_check() {
    for name in ["default.scn", "fixedpoint.scn"] {
        let sc = Scenario::load(&scenarios().join(name), None).unwrap();
        assert!(sc.audit.iter().all(|a| a.ok), "{name}");
        for label in [
            "A1", "A2", "A3", "A4", "A5", "A6", "A8", "B1", "B2", "B4", "B5", "C3",
        ] {
            assert!(sc.audit.iter().any(|a| a.label == label), "{name}: {label}");
        }
    }
}

#[test]
fn seed_override_wins() {
    let sc = Scenario::load(&scenarios().join("default.scn"), Some(99)).unwrap();
    assert_eq!(sc.seed, 99);
    assert_eq!(parse(&default_text()).unwrap().seed, 7);
}

#[test]
fn zero_viscosity_is_a1() {
    rejected_with(&edited("tau = 0.5", "tau = 0.0"), "A1");
}

#[test]
fn negative_chi_is_a1() {
    rejected_with(&edited("chi = 0.3", "chi = -0.3"), "A1");
}

#[test]
fn bad_kernel_is_a2() {
    rejected_with(&edited("width = 0.1", "width = -0.1"), "A2");
}

#[test]
fn theta0_below_theta_is_a3() {
    rejected_with(&edited("theta0 = 0.6", "theta0 = 0.2"), "A3");
}

#[test]
fn weak_nonlocal_term_is_a4() {
    let msgs = rejected_with(&edited("b = 2.0", "b = 0.01"), "A4");
    assert!(msgs.iter().any(|m| has_label(m, "B2")));
}

#[test]
fn c0_below_chi_squared_is_b2_only() {
    let base = parse(&default_text()).unwrap().coercivity;
    // c0 = A min F'' + B min a; aim for c0 = chi^2 / 2.
    let target = 0.5 * 0.3f64.powi(2);
    let b = (target - base.min_f2) / base.min_a;
    let msgs = rejected_with(&edited("b = 2.0", &format!("b = {b}")), "B2");
    assert!(!msgs.iter().any(|m| has_label(m, "A4")), "{msgs:?}");
}

#[test]
fn vanishing_proliferation_is_a5() {
    rejected_with(&edited("low = 0.2", "low = 0.0"), "A5");
}

#[test]
fn unbounded_proliferation_is_b3() {
    rejected_with(
        &edited("high = 1.0, steepness", "high = inf, steepness"),
        "B3",
    );
}

#[test]
fn zero_mobility_is_a6() {
    rejected_with(&edited("m = 1.0", "m = 0.0"), "A6");
}

#[test]
fn initial_phase_outside_domain_is_a8() {
    let msgs = rejected_with(&edited("inside = 0.8", "inside = 1.5"), "A8");
    assert!(msgs.iter().any(|m| has_label(m, "B5")));
}

#[test]
fn initial_phase_touching_pure_phase_is_b5_only() {
    let text = edited(
        "phi = { preset = \"bump\", inside = 0.8, outside = -0.8, radius = 0.25, width = 0.05 }",
        "phi = -1.0",
    );
    let msgs = rejected_with(&text, "B5");
    assert!(!msgs.iter().any(|m| has_label(m, "A8")), "{msgs:?}");
}

#[test]
fn non_finite_control_is_b4() {
    rejected_with(&edited("\nu = 0.5", "\nu = nan"), "B4");
}

#[test]
fn negative_weight_is_c1() {
    rejected_with(&edited("alpha_u = 0.1", "alpha_u = -0.1"), "C1");
}

#[test]
fn non_finite_target_is_c2() {
    rejected_with(&edited("phi_omega = -0.8", "phi_omega = nan"), "C2");
}

#[test]
fn inverted_bounds_is_c3() {
    rejected_with(&edited("u_min = 0.0", "u_min = 3.0"), "C3");
}

#[test]
fn negative_u_min_is_c3() {
    rejected_with(&edited("u_min = 0.0", "u_min = -1.0"), "C3");
}

#[test]
fn bad_optimizer_settings_are_reported() {
    rejected_with(
        &edited(
            "stationarity_tol = 1e-6",
            "stationarity_tol = 1e-6\nshrink = 1.5",
        ),
        "optimizer",
    );
}

#[test]
fn every_violation_is_listed_at_once() {
    let text = edited("tau = 0.5", "tau = 0.0").replacen("m = 1.0", "m = 0.0", 1);
    let msgs = rejected_with(&text, "A1");
    assert!(msgs.iter().any(|m| has_label(m, "A6")));
}

#[test]
fn syntax_error_reports_position() {
    let text = default_text().replacen("[time]", "[time\n", 1);
    let line = default_text()
        .lines()
        .position(|l| l.starts_with("[time]"))
        .unwrap()
        + 1;
    match parse(&text) {
        Err(Error::Parse {
            line: l, column, ..
        }) => {
            assert_eq!(l, line);
            assert!(column >= 1);
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(matches!(
        parse(&edited("tau = 0.5", "tau = 0.5\ntua = 1.0")),
        Err(Error::Parse { .. })
    ));
}

#[test]
fn missing_file_preset_is_an_error() {
    let text = edited(
        "sigma = 1.0\n",
        "sigma = { preset = \"file\", path = \"does-not-exist.raw64\" }\n",
    );
    assert!(parse(&text).is_err());
}

#[test]
fn file_preset_reads_raw64() {
    let dir = tempfile::tempdir().unwrap();
    let sc = parse(&default_text()).unwrap();
    let path = dir.path().join("sigma0.raw64");
    let field = sc.phi0.map(|p| 0.5 + 0.25 * p);
    nlococ::io::write_raw64(&path, &[&field]).unwrap();
    let text = edited(
        "sigma = 1.0\n",
        "sigma = { preset = \"file\", path = \"sigma0.raw64\" }\n",
    );
    let loaded = Scenario::parse(&text, Path::new(dir.path()), None).unwrap();
    assert_eq!(loaded.sigma0, field);
}
