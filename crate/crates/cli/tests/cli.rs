use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_order-density"))
}

fn spec(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("specs")
        .join(name)
        .display()
        .to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON report")
}

#[test]
fn exact_values() {
    let v = json(&run(&["exact", "--image", "gl2", "--ell", "7", "--defect", "0"]));
    assert_eq!(v["value"], "14071/16416");
    assert_eq!(v["method"], "closed");
    let v = json(&run(&["exact", "--image", "gl2", "--ell", "2"]));
    assert_eq!(v["value"], "11/21");
    let v = json(&run(&["exact", "--image", "norm-nonsplit", "--ell", "2", "--scale", "2"]));
    assert_eq!(v["value"], "109/120");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["exact", "--image", "bogus", "--ell", "2"]).status.code(), Some(2));
    assert_eq!(run(&["exact", "--image", "gl2", "--ell", "4"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["measure", "--group", "/nonexistent.json"]).status.code(), Some(2));
}

#[test]
fn size_guard_exit_3() {
    let out = run(&["measure", "--group", &spec("gl2-ell2.json"), "--size-guard", "100"]);
    assert_eq!(out.status.code(), Some(3));
    let out = bin()
        .args(["measure", "--group", &spec("gl2-ell2.json")])
        .env("ORDER_DENSITY_SIZE_GUARD", "100")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn measure_tables() {
    let v = json(&run(&["measure", "--group", &spec("gl2-ell2.json")]));
    let tables = v["tables"].as_array().unwrap();
    assert_eq!(tables.len(), 1);
    assert_eq!(tables[0]["total"], "1");

    let v = json(&run(&["measure", "--group", &spec("order6-mod3.json"), "--fit"]));
    assert_eq!(v["confirmed"], true);
    let fit = &v["fits"][0];
    let consts: Vec<&str> = fit["pieces"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["c"].as_str().unwrap())
        .collect();
    assert_eq!(consts, ["5/3", "8", "32/3"]);
}

#[test]
fn series_from_group_spec() {
    let v = json(&run(&["series", "--group", &spec("order6-mod3.json")]));
    assert_eq!(v["value"], "23/104");
    let v = json(&run(&["series", "--group", &spec("order6-mod3.json"), "--defect", "2"]));
    assert_eq!(v["value"], "95/104");
    let v = json(&run(&["series", "--image", "split", "--ell", "3", "--defect", "1"]));
    let closed = json(&run(&["exact", "--image", "split", "--ell", "3", "--defect", "1"]));
    assert_eq!(v["value"], closed["value"]);
}

#[test]
fn simulate_recovers_gl2_value() {
    let v = json(&run(&["simulate", "--arboreal", &spec("arboreal-gl2-ell2.json")]));
    assert_eq!(v["value"], "11/21");
    let v = json(&run(&["simulate", "--arboreal", &spec("arboreal-gl2-ell2.json"), "--level", "1"]));
    assert_eq!(v["fixed_density"], "5/8");
}

#[test]
fn empirical_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rows.csv");
    let report = dir.path().join("report.json");
    let out = run(&[
        "empirical",
        "--curve",
        &spec("curve-37a1.json"),
        "--ell",
        "2",
        "--bound",
        "20000",
        "--exact",
        "11/21",
        "--csv",
        csv.to_str().unwrap(),
        "--output",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["exact_reference"], "11/21");
    let used = v["primes_used"].as_u64().unwrap();
    assert!(v["count_coprime"].as_u64().unwrap() <= used);
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert!(rows.starts_with("p,N,ord,v_ell\n"));
    assert_eq!(rows.lines().count() as u64, used + 1);
    let diff: f64 = v["difference"].as_str().unwrap().parse().unwrap();
    assert!(diff < 0.02);
}

#[test]
fn reports_are_deterministic() {
    let args = ["series", "--image", "norm-split", "--ell", "2", "--threads", "2"];
    assert_eq!(run(&args).stdout, run(&args).stdout);
}

#[test]
fn verify_exact_subset_passes() {
    let out = run(&["verify", "--skip", "empirical"]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{table}");
    assert!(table.contains("PASS  pipeline   index3-mod13 ℓ=13 d=0"));
    assert!(!table.contains("FAIL"));
}

#[test]
fn verify_tampered_fixture_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixtures.csv");
    std::fs::write(
        &path,
        "section,case,ell,d,expected\nclosed,gl2,2,0,11/21\nclosed,gl2,3,0,140/208\n",
    )
    .unwrap();
    let out = run(&[
        "verify",
        "--skip",
        "cross",
        "--fixtures",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("PASS  closed     gl2 ℓ=2 d=0"));
    assert!(table.contains("FAIL  closed     gl2 ℓ=3 d=0"));
}

#[test]
#[ignore = "sweeps five curves to 10^5"]
fn verify_full_suite() {
    let out = run(&["verify"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}
