use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hydrocascade")).args(args).env_remove("HYDRO_TIME_LIMIT").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn summary_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"))
        .parse()
        .unwrap()
}

#[test]
fn validate_minimal_fixture() {
    let out = run(&["validate", s(&fixture("single.toml"))]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok: 1 reservoirs"));
}

#[test]
fn solve_then_simulate_single_reservoir() {
    let dir = tempfile::tempdir().unwrap();
    let solved = dir.path().join("solve");
    let out = run(&["solve", s(&fixture("single.toml")), "--out", s(&solved)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(solved.join("summary.txt")).unwrap();
    let objective = summary_value(&summary, "objective");
    assert!((objective - 8.829).abs() <= 1e-6 * 8.829, "{objective}");
    assert!(summary.contains("status: optimal"));

    let sim = dir.path().join("sim");
    let out = run(&[
        "simulate",
        s(&fixture("single.toml")),
        "--schedule",
        s(&solved.join("schedule.csv")),
        "--out",
        s(&sim),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(sim.join("summary.txt")).unwrap();
    assert!((summary_value(&summary, "energy_realized_mwh") - 8.829).abs() < 1e-9);
    assert_eq!(summary_value(&summary, "violations"), 0.0);
    assert!(sim.join("report.csv").exists() && sim.join("violations.csv").exists());
}

#[test]
fn compare_reports_drawdown_gap() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["compare", s(&fixture("drawdown.toml")), "--tiers", "lp_fixed,milp_pwl", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("lp_fixed") && table.contains("milp_pwl"));

    let mut rdr = csv::Reader::from_path(dir.path().join("gaps.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let gap = |tier: &str| -> (f64, Option<f64>) {
        let r = rows.iter().find(|r| &r[col("tier")] == tier).unwrap();
        (r[col("gap_percent")].parse().unwrap(), r[col("declared_bound_percent")].parse().ok())
    };
    let (lp_gap, _) = gap("lp_fixed");
    let (pwl_gap, pwl_bound) = gap("milp_pwl");
    assert!(lp_gap >= 2.0, "{lp_gap}");
    assert!(pwl_gap.abs() <= 2.0 * pwl_bound.unwrap(), "{pwl_gap} vs {pwl_bound:?}");
    assert!(dir.path().join("schedule_milp_pwl.csv").exists());
}

#[test]
fn input_errors_exit_2_on_stderr() {
    for args in [
        vec!["validate".to_string(), fixture("invalid/missing_csv.toml").to_str().unwrap().to_string()],
        vec!["validate".to_string(), fixture("invalid/decreasing_curve.toml").to_str().unwrap().to_string()],
        vec!["validate".to_string(), "/no/such/file.toml".to_string()],
        vec!["frobnicate".to_string()],
        vec!["compare".into(), fixture("single.toml").to_str().unwrap().into(), "--tiers".into(), "bogus".into(), "--out".into(), "/tmp/x".into()],
    ] {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = run(&refs);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(out.stdout.is_empty(), "{args:?} wrote to stdout");
        assert!(!out.stderr.is_empty(), "{args:?} gave no diagnostics");
    }
    let err = String::from_utf8_lossy(&run(&["validate", s(&fixture("invalid/missing_csv.toml"))]).stderr).to_string();
    assert!(err.contains("does_not_exist.csv"), "{err}");
}

#[test]
fn bad_time_limit_env_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hydrocascade"))
        .args(["solve", s(&fixture("single.toml")), "--out", s(dir.path())])
        .env("HYDRO_TIME_LIMIT", "soon")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("HYDRO_TIME_LIMIT"));
}

#[test]
fn infeasible_instance_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("single.toml")).unwrap().replace("v_initial = 72000.0", "v_initial = 72000.0\nv_terminal = 90000.0");
    let file = dir.path().join("infeasible.toml");
    fs::write(&file, text).unwrap();
    let out = run(&["solve", s(&file), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}

#[test]
fn fitpwl_parabola_single_piece() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("x2.csv");
    let mut text = String::from("x,y\n");
    for i in 0..=50 {
        let x = i as f64 / 50.0;
        text.push_str(&format!("{x:?},{:?}\n", x * x));
    }
    fs::write(&samples, text).unwrap();
    let fit = dir.path().join("fit.csv");
    let out = run(&["fitpwl", "--samples", s(&samples), "--epsilon", "0.125", "--out", s(&fit)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("pieces: 1"));
    assert_eq!(fs::read_to_string(&fit).unwrap().lines().count(), 3);
}

#[test]
fn bench_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["bench", "--seed", "3", "--sizes", "1x1,2x1", "--periods", "3", "--tiers", "lp_fixed,milp_pwl1d", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(csv.lines().skip(1).all(|l| l.contains(",optimal,")), "{csv}");
}

#[test]
fn two_reservoir_fixture_solves() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", s(&fixture("two_reservoir/cascade.toml")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let sched = fs::read_to_string(dir.path().join("schedule.csv")).unwrap();
    assert!(sched.contains("Lower,4,storage,"));
}
