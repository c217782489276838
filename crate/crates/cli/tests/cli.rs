use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn wbary(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wbary"))
        .args(args)
        .env_remove("WBARY_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Tiny Case 1 instance (N = 3, m = 4, m' = 5) written into `dir`.
fn tiny_case1(dir: &TempDir, seed: u64) -> PathBuf {
    let path = dir.path().join(format!("case1-{seed}.json"));
    let out = wbary(&[
        "generate", "--case", "1", "-n", "3", "--m", "4", "--m-prime", "5", "--seed", &seed.to_string(), "--out",
        p(&path),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    path
}

#[test]
fn generate_then_solve_with_sgs() {
    let dir = TempDir::new().unwrap();
    let inst = tiny_case1(&dir, 1);
    let file = read_json(&inst);
    assert_eq!(file["N"], 3);
    assert_eq!(file["distributions"].as_array().unwrap().len(), 3);

    let sol = dir.path().join("sol.json");
    let rep = dir.path().join("rep.json");
    let trace = dir.path().join("trace.csv");
    let out = wbary(&[
        "solve", p(&inst), "--method", "sgs", "--tol", "1e-5", "--out", p(&sol), "--report", p(&rep), "--trace",
        p(&trace),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let report = read_json(&rep);
    assert_eq!(report["method"], "sgs");
    assert_eq!(report["converged"], true);
    // the tolerance applies to the cost-scaled problem the solver iterates on
    let res = &report["scaled_residuals"];
    let worst = ["eta_p", "eta_d", "eta_gap"].iter().map(|k| res[k].as_f64().unwrap()).fold(0.0, f64::max);
    assert!(worst < 1e-5, "max residual {worst}");

    let back = wbary::io::read_solution(&sol).unwrap();
    assert!(back.plans.is_none());
    let w_sum: f64 = back.w.iter().sum();
    assert!((w_sum - 1.0).abs() < 1e-6);

    let csv = std::fs::read_to_string(&trace).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("iter,") && header.contains("eta_gap") && header.contains("beta"));
    assert!(csv.lines().count() > 1);
}

#[test]
fn oracle_solution_with_plans_validates_against_the_instance() {
    let dir = TempDir::new().unwrap();
    let inst_path = tiny_case1(&dir, 2);
    let sol = dir.path().join("sol.json");
    let out = wbary(&["solve", p(&inst_path), "--method", "oracle", "--emit-plans", "--out", p(&sol)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let back = wbary::io::read_solution(&sol).unwrap();
    assert_eq!(back.plans.as_ref().map(Vec::len), Some(3));
    let inst = wbary::io::read_instance(&inst_path, 1).unwrap();
    back.validate_against(&inst).unwrap();
}

#[test]
fn iteration_cap_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let inst = tiny_case1(&dir, 3);
    let out = wbary(&["solve", p(&inst), "--max-iter", "5", "--out", p(&dir.path().join("s.json"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("iteration cap"));
    let back = wbary::io::read_solution(&dir.path().join("s.json")).unwrap();
    assert!(!back.converged);
}

#[test]
fn small_epsilon_selects_the_log_domain() {
    let dir = TempDir::new().unwrap();
    let inst = tiny_case1(&dir, 4);
    let rep = dir.path().join("rep.json");
    let out = wbary(&[
        "solve", p(&inst), "--method", "ibp", "--epsilon", "0.001", "--max-iter", "200", "--report", p(&rep),
        "--out", p(&dir.path().join("s.json")),
    ]);
    assert!(matches!(code(&out), 0 | 2), "{}", stderr(&out));
    let report = read_json(&rep);
    assert_eq!(report["params"]["ibp_mode"], "log");
    let notes = report["notes"].as_array().unwrap();
    assert!(notes.iter().any(|n| n.as_str().unwrap().contains("automatically")));
}

#[test]
fn foreign_method_flags_are_errors() {
    let dir = TempDir::new().unwrap();
    let inst = tiny_case1(&dir, 5);
    let out = wbary(&["solve", p(&inst), "--method", "sgs", "--epsilon", "0.1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--epsilon"));
    let out = wbary(&["solve", p(&inst), "--method", "ibp", "--rho", "2"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn corrupt_json_reports_its_position() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"N\": 2,\n  \"m\": oops\n}\n").unwrap();
    let out = wbary(&["solve", p(&bad)]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("bad.json:3:"), "{err}");
}

#[test]
fn missing_file_is_an_error() {
    let out = wbary(&["solve", "/nonexistent/instance.json"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn presolve_is_applied_to_sparse_instances() {
    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("case2.json");
    let out = wbary(&[
        "generate", "--case", "2", "-n", "3", "--m", "4", "--m-prime", "10", "--sr", "0.2", "--out", p(&inst),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rep = dir.path().join("rep.json");
    let sol = dir.path().join("sol.json");
    let out = wbary(&[
        "solve", p(&inst), "--method", "badmm", "--max-iter", "100", "--report", p(&rep), "--out", p(&sol),
        "--emit-plans",
    ]);
    assert!(matches!(code(&out), 0 | 2), "{}", stderr(&out));
    let notes = read_json(&rep)["notes"].clone();
    assert!(notes.as_array().unwrap().iter().any(|n| n.as_str().unwrap().contains("presolve")));
    let back = wbary::io::read_solution(&sol).unwrap();
    assert!(back.plans.unwrap().iter().all(|pl| pl.cols() == 10));
}

fn compare_csv(args: &[&str]) -> Vec<Vec<String>> {
    let mut full = vec!["compare", "--format", "csv"];
    full.extend_from_slice(args);
    let out = wbary(&full);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header[..3], ["method", "trials", "normalized_obj"]);
    rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
}

const TINY: [&str; 8] = ["--case", "1", "-n", "3", "--m", "4", "--m-prime", "5"];

#[test]
fn compare_oracle_with_itself() {
    let mut args = TINY.to_vec();
    args.extend(["--methods", "oracle,oracle"]);
    let rows = compare_csv(&args);
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[7], "oracle");
    }
}

#[test]
fn compare_sgs_and_coarse_ibp() {
    let mut args = TINY.to_vec();
    args.extend(["--methods", "sgs,ibp@0.1"]);
    let rows = compare_csv(&args);
    let sgs: f64 = rows[0][2].parse().unwrap();
    let ibp: f64 = rows[1][2].parse().unwrap();
    assert_eq!(rows[1][0], "ibp@0.1");
    assert!(100.0 * sgs <= ibp, "sgs {sgs:e}, ibp {ibp:e}");
}

#[test]
fn compare_trials_are_deterministic() {
    let mut args = TINY.to_vec();
    args.extend(["--methods", "sgs,badmm", "--trials", "3", "--seed", "7"]);
    // everything except the timing column
    let strip = |rows: Vec<Vec<String>>| -> Vec<Vec<String>> {
        rows.into_iter().map(|mut r| {
            r.remove(5);
            r
        }).collect()
    };
    let a = strip(compare_csv(&args));
    let b = strip(compare_csv(&args));
    assert_eq!(a, b);
    assert!(a.iter().all(|r| r[1] == "3"));
}

#[test]
fn compare_needs_two_methods() {
    let mut args = vec!["compare"];
    args.extend(TINY);
    args.extend(["--methods", "sgs"]);
    assert_eq!(code(&wbary(&args)), 1);
}

#[test]
fn free_support_midpoint() {
    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("two.json");
    std::fs::write(
        &inst,
        r#"{"distributions": [{"weights": [1.0], "supports": [[0.0]]}, {"weights": [1.0], "supports": [[2.0]]}]}"#,
    )
    .unwrap();
    let res = dir.path().join("res.json");
    let out = wbary(&["free-support", p(&inst), "--m", "1", "--inner", "oracle", "--out", p(&res)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = read_json(&res);
    let x = v["barycenter"]["supports"][0][0].as_f64().unwrap();
    assert!((x - 1.0).abs() < 1e-9, "{x}");
    assert!((v["report"]["objective"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn free_support_rejects_other_exponents() {
    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("p1.json");
    std::fs::write(&inst, r#"{"p": 1.0, "distributions": [{"weights": [1.0], "supports": [[0.0]]}]}"#).unwrap();
    let out = wbary(&["free-support", p(&inst), "--m", "1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("p = 2"));
}

#[test]
fn bench_writes_a_series() {
    let out = wbary(&["bench", "--ns", "2,4", "--iterations", "10", "--repeats", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "n,iterations,seconds,per_iteration");
    assert_eq!(lines.count(), 2);
    assert!(stderr(&out).contains("slope:"));

    let out = wbary(&["bench", "--ns", "3", "--iterations", "5", "--repeats", "1"]);
    assert_eq!(code(&out), 0);
    assert!(stderr(&out).contains("undefined"));

    let out = wbary(&["bench", "--ns", "4,2"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn gauss_pair_with_truth() {
    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("g.json");
    let truth = dir.path().join("truth.json");
    let out = wbary(&["generate", "--case", "gauss-pair", "--m", "30", "--out", p(&inst), "--truth", p(&truth)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let w = read_json(&truth);
    assert_eq!(w.as_array().unwrap().len(), 30);
    let out = wbary(&["generate", "--case", "1", "--truth", p(&truth)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn thread_budget_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let inst = tiny_case1(&dir, 6);
    let out = Command::new(env!("CARGO_BIN_EXE_wbary"))
        .args(["solve", p(&inst), "--out", p(&dir.path().join("s.json"))])
        .env("WBARY_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = Command::new(env!("CARGO_BIN_EXE_wbary"))
        .args(["solve", p(&inst), "--threads", "1", "--out", p(&dir.path().join("s.json"))])
        .env("WBARY_THREADS", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "flag wins over the variable: {}", stderr(&out));
}
