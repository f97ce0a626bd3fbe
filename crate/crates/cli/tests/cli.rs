use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn tei(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tei"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("TV_THREADS", "1")
        .output()
        .expect("spawn tei")
}

fn report(out: &Path, command: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join(format!("{command}.json"))).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn validate_two_point() {
    let dir = tempfile::tempdir().unwrap();
    let o = tei(&["validate", data("two_point.json").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.starts_with("validate: n=2"));
    let r = report(dir.path(), "validate");
    assert_eq!(r["schema"], 1);
    assert_eq!(r["version"], tei_core::VERSION);
    assert_eq!(r["status"], "ok");
    assert_eq!(r["config"]["command"], "validate");
    assert_eq!(r["config"]["settings"]["multistarts"], 32);
    assert_eq!(r["result"]["n"], 2);
    assert_eq!(r["result"]["induced_distance_is_metric"], true);
    assert!((r["result"]["nu_entropy"].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn transport_writes_plan_and_potentials() {
    let dir = tempfile::tempdir().unwrap();
    let o = tei(&["transport", data("small_points.json").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path(), "transport");
    assert!(r["result"]["duality_gap"].as_f64().unwrap().abs() <= 1e-8);
    let plan = std::fs::read_to_string(dir.path().join("transport_plan.csv")).unwrap();
    assert!(plan.starts_with("i,j,mass\n"));
    let pot = std::fs::read_to_string(dir.path().join("transport_potentials.csv")).unwrap();
    assert_eq!(pot.lines().count(), 9);
}

#[test]
fn same_config_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"alpha": "identity", "beta": "identity", "multistarts": 8, "delta": 3.0}"#);
    let inst = data("small_points.json");
    let args = ["minimize", inst.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--a", "0.5", "--seed", "7"];
    let out = dir.path().join("out");
    let strip = |mut v: Value| {
        v.as_object_mut().unwrap().remove("metadata");
        serde_json::to_string(&v).unwrap()
    };
    assert_eq!(tei(&args, &out).status.code(), Some(0));
    let first = std::fs::read_to_string(out.join("minimize.json")).unwrap();
    let first_trace = std::fs::read(out.join("minimize_trace.csv")).unwrap();
    assert_eq!(tei(&args, &out).status.code(), Some(0));
    let second = std::fs::read_to_string(out.join("minimize.json")).unwrap();
    assert_eq!(
        strip(serde_json::from_str(&first).unwrap()),
        strip(serde_json::from_str(&second).unwrap())
    );
    // byte-identical outside the metadata block
    let cut = |s: &str| s.lines().filter(|l| !l.contains("_unix") && !l.contains("elapsed_seconds")).collect::<Vec<_>>().join("\n");
    assert_eq!(cut(&first), cut(&second));
    assert_eq!(first_trace, std::fs::read(out.join("minimize_trace.csv")).unwrap());
    let r: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(r["config"]["settings"]["seed"], 7);
    assert_eq!(r["config"]["settings"]["a"], 0.5);
    assert!(r["result"]["certificate"]["lower_bound"].as_f64().unwrap() <= r["result"]["minimization"]["value"].as_f64().unwrap());
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let two = data("two_point.json");
    let two = two.to_str().unwrap();
    assert_eq!(tei(&["frobnicate", two], dir.path()).status.code(), Some(1));
    assert_eq!(tei(&["minimize", two], dir.path()).status.code(), Some(1));
    assert_eq!(tei(&["validate", "/nonexistent/instance.json"], dir.path()).status.code(), Some(1));
    let bad_cfg = write(dir.path(), "bad.json", r#"{"multistart": 4}"#);
    assert_eq!(tei(&["validate", two, "--config", bad_cfg.to_str().unwrap()], dir.path()).status.code(), Some(1));
    let bad_inst = write(dir.path(), "inst.json", r#"{"space": {"dist": [[0, 1], [2, 0]]}, "mu": {"weights": [1, 1]}}"#);
    let o = tei(&["validate", bad_inst.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("asymmetric"));
    let extra = write(dir.path(), "extra.json", r#"{"space": {"dist": [[0, 1], [1, 0]]}, "mu": {"weights": [1, 1]}, "sigma": 2}"#);
    assert_eq!(tei(&["validate", extra.to_str().unwrap()], dir.path()).status.code(), Some(1));
    // transport without a second measure
    let no_nu = write(dir.path(), "nonu.json", r#"{"space": {"dist": [[0, 1], [1, 0]]}, "mu": {"weights": [1, 1]}}"#);
    assert_eq!(tei(&["transport", no_nu.to_str().unwrap()], dir.path()).status.code(), Some(1));
}

/// A defect far below the grid resolution lets sub-cell moves inflate the T2
/// estimate past A(mu).
#[test]
fn violated_chain_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"t2_defect": 0.02}"#);
    let o = tei(&["constants", data("gaussian_41.json").to_str().unwrap(), "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("FAILED constants:"));
    let r = report(dir.path(), "constants");
    assert_eq!(r["status"], "assertion_failed");
    assert_eq!(r["result"]["chain_ok"]["t2_le_a_mu"], false);
    assert_eq!(r["result"]["chain_ok"]["a_mu_le_w2i"], true);
}

#[test]
fn concentration_transfers_hold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"delta": 0.3}"#);
    let o = tei(&["concentration", data("small_points.json").to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--a", "1.0"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path(), "concentration");
    assert_eq!(r["result"]["mode"], "exact");
    assert!(r["result"]["exp_integral_transfer"]["slack"].as_f64().unwrap() >= 0.0);
    assert!(r["result"]["lower_bound_transfer"]["slack"].as_f64().unwrap() >= 0.0);
    let csv = std::fs::read_to_string(dir.path().join("concentration_profile.csv")).unwrap();
    assert!(csv.starts_with("radius,alpha,witness\n"));
}

#[test]
fn dual_check_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let o = tei(&["dual-check", data("small_points.json").to_str().unwrap(), "--a", "0.5"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(report(dir.path(), "dual-check")["result"]["gap"].as_f64().unwrap() <= 1e-4);
}

#[test]
fn verify_commands_on_coarse_gaussian() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"slope": {"mode": "graph", "radius": 0.150000001}, "class_size": 8}"#);
    for cmd in ["verify-ov", "verify-w2i", "verify-restricted-lsi"] {
        let o = tei(&[cmd, data("gaussian_41.json").to_str().unwrap(), "--config", cfg.to_str().unwrap()], dir.path());
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stdout));
        assert_eq!(report(dir.path(), cmd)["status"], "ok");
    }
}

#[test]
fn ma_residual_profile_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"alpha": "identity", "beta": "identity", "method": "fixed_point", "multistarts": 4, "max_iter": 20000, "tol": 1e-13, "hops": 1}"#,
    );
    let o = tei(&["ma-residual", data("tilted_101.json").to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--a", "1.5"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("ma_residual.csv")).unwrap();
    assert!(csv.starts_with("x,V,dV,d2V,pre_ma_residual,ma_residual\n"));
    assert_eq!(csv.lines().count(), 102);
    let r = report(dir.path(), "ma-residual");
    assert!(r["result"]["profile"]["min_convexity_second_difference"].as_f64().unwrap() >= -1e-8);
}

#[test]
fn help_exits_zero() {
    let o = Command::new(env!("CARGO_BIN_EXE_tei")).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stdout).unwrap().contains("ma-residual"));
}

/// On a finite space `aH - W²` is negative next to `mu` for every `a`, since
/// `W²` is first order in the displaced mass and `H` second order, so the
/// minimizer never returns to `mu`.
#[test]
#[ignore = "unattainable on finite spaces: the minimizer stays a sub-cell perturbation of mu for every a"]
fn minimize_above_bracket_returns_mu() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"alpha": "sqrt", "beta": "sqrt"}"#);
    let o = tei(&["minimize", data("gaussian_201.json").to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--a", "2.2"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path(), "minimize");
    assert!(r["result"]["minimization"]["value"].as_f64().unwrap().abs() <= 1e-8);
    assert!(r["result"]["tv_to_mu"].as_f64().unwrap() <= 1e-6);
}
