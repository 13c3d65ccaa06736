use std::collections::BTreeSet;
use std::process::{Command, Output};

use qreduce_core::verify::brute_force_points;
use qreduce_core::TorusAction;
use serde_json::Value;

fn qreduce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qreduce")).args(args).output().expect("spawn qreduce")
}

fn ok_lines(args: &[&str]) -> Vec<Value> {
    let out = qreduce(args);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

fn f64_at(v: &Value, path: &[&str]) -> f64 {
    path.iter().fold(v, |v, key| &v[*key]).as_f64().expect("number")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn dim_first_order_fit_is_exact_for_weights_1_2() {
    let lines = ok_lines(&["dim", "--weights", "1,2", "--k", "1:50:1"]);
    assert_eq!(lines.len(), 50);
    for line in &lines {
        let k = line["k"].as_u64().unwrap();
        assert_eq!(line["dim"].as_u64().unwrap(), k / 2 + 1);
        assert_eq!(line["schema_version"], 1);
        assert!(f64_at(line, &["residual", "1"]).abs() < 1e-9, "{line}");
    }
}

#[test]
fn dim_counts_match_enumeration() {
    let lines = ok_lines(&["dim", "--weights", "2,4,3", "--k", "1:200:1"]);
    for line in &lines {
        let k = line["k"].as_u64().unwrap();
        let mut count = 0;
        for a in 0..=k / 4 {
            for b in 0..=(k - 4 * a) / 3 {
                if (k - 4 * a - 3 * b) % 2 == 0 {
                    count += 1;
                }
            }
        }
        assert_eq!(line["dim"].as_u64().unwrap(), count, "k = {k}");
    }
}

#[test]
fn dim_single_level() {
    let lines = ok_lines(&["dim", "--weights", "1,1", "--k", "5"]);
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["dim"], 6);
}

#[test]
fn density_sums_match_direct_summation() {
    let lines = ok_lines(&["density", "--weights", "1,2", "--symbol", "s(1)", "--f", "x", "--k", "8:64:2", "--fit-order", "1"]);
    assert_eq!(lines.len(), 29);
    for line in &lines {
        let k = line["k"].as_u64().unwrap();
        // Eigenvalues (α_1 + 1)/k over α_1 = k, k − 2, …
        let oracle: f64 = (0..=k / 2).map(|j| (k - 2 * j + 1) as f64 / k as f64).sum();
        let sum = f64_at(line, &["sums", "x"]);
        assert!((sum - oracle).abs() < 1e-10 * oracle, "k = {k}: {sum} vs {oracle}");
        let resid = f64_at(line, &["residual", "x"]);
        assert!((sum - f64_at(line, &["model", "x"]) - resid).abs() < 1e-12);
    }
    let late: Vec<f64> = lines.iter().rev().take(5).map(|l| f64_at(l, &["residual", "x"]).abs()).collect();
    assert!(late.iter().all(|r| *r < 0.1), "{late:?}");
}

#[test]
fn density_manifold_case_has_one_sector() {
    let sectors = ok_lines(&["sectors", "--weights", "1,1"]);
    assert_eq!(sectors.len(), 1);
    assert_eq!(sectors[0]["zeta"], "1");
    let lines = ok_lines(&["density", "--weights", "1,1", "--symbol", "s(1)", "--f", "x^2", "--k", "8:64:2"]);
    for line in &lines {
        let k = line["k"].as_u64().unwrap();
        let oracle: f64 = (0..=k).map(|a| ((a + 1) as f64 / k as f64).powi(2)).sum();
        assert!((f64_at(line, &["sums", "x^2"]) - oracle).abs() < 1e-9 * oracle);
    }
}

#[test]
fn density_of_constant_reduces_to_dim() {
    let dens = ok_lines(&["density", "--weights", "1,2", "--symbol", "s(1)", "--f", "1", "--k", "1:40"]);
    let dims = ok_lines(&["dim", "--weights", "1,2", "--k", "1:40"]);
    for (d, n) in dens.iter().zip(&dims) {
        assert_eq!(d["dim"], n["dim"]);
        assert_eq!(f64_at(d, &["sums", "1"]), f64_at(n, &["sums", "1"]));
        assert!((f64_at(d, &["model", "1"]) - f64_at(n, &["model", "1"])).abs() < 1e-9);
    }
}

#[test]
fn several_test_functions_in_one_run() {
    let lines = ok_lines(&["density", "--weights", "1,2", "--symbol", "s(1)", "--f", "x;x^2", "--f", "1", "--k", "10:30"]);
    let keys: Vec<&String> = lines[0]["sums"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["1", "x", "x^2"]);
}

#[test]
fn json_output_is_byte_identical_across_runs() {
    let args = ["density", "--weights", "1,2", "--symbol", "s(1) + s(2)^2", "--f", "x^2", "--k", "6:30", "--eigenvalues"];
    let a = qreduce(&args);
    let b = qreduce(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn verify_only_wick() {
    let out = qreduce(&["verify", "--only", "wick"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("PASS criterion  1 [wick]"), "{text}");
    assert!(text.contains("1/1 criteria passed"));
}

#[test]
fn injected_fault_fails_with_named_invariant() {
    let out = qreduce(&["verify", "--only", "wick", "--inject-fault", "1e-3", "--format", "json"]);
    assert_eq!(out.status.code(), Some(1));
    let line: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(line["block"], "wick");
    assert_eq!(line["passed"], false);
    assert!(stderr(&out).contains("criterion 1 [wick]"));
}

fn point_set(line: &Value) -> BTreeSet<Vec<i64>> {
    line["numerators"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p.as_array().unwrap().iter().map(|x| x.as_i64().unwrap()).collect())
        .collect()
}

#[test]
fn polytope_matches_oracle() {
    let action = TorusAction::cp3_example();
    for (k, count) in [(4, 91), (2, 28)] {
        let lines = ok_lines(&["polytope", "--k", &k.to_string()]);
        assert_eq!(lines[0]["count"], count);
        let oracle: BTreeSet<Vec<i64>> = brute_force_points(&action, k).into_iter().map(|p| p.numer).collect();
        assert_eq!(point_set(&lines[0]), oracle, "k = {k}");
    }
}

#[test]
fn polytope_cp1_and_level_one() {
    let cp1 = ok_lines(&["polytope", "--action", "cp1", "--k", "2"]);
    assert_eq!(cp1[0]["count"], 3);
    let lines = ok_lines(&["polytope", "--k", "1"]);
    let points = point_set(&lines[0]);
    for v in lines[0]["vertices"].as_array().unwrap() {
        let v: Vec<i64> = v.as_array().unwrap().iter().map(|x| x.as_i64().unwrap()).collect();
        assert!(points.contains(&v), "{v:?}");
    }
}

#[test]
fn polytope_csv_layout() {
    let out = qreduce(&["polytope", "--action", "cp1", "--k", "2", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, "kind,k,lambda_1/2pi\nvertex,,0\nvertex,,1\npoint,2,0.0\npoint,2,0.5\npoint,2,1.0\n");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    let out_path = dir.path().join("dim.csv");
    std::fs::write(&conf, "# dimension table\nweights = 1,1\nk = 1:3\nformat = csv\n").unwrap();
    let out = qreduce(&["dim", "--config", conf.to_str().unwrap(), "--k", "4", "--output", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,dim,model,residual"));
    assert!(lines.next().unwrap().starts_with("4,5,"));
    assert_eq!(lines.next(), None);
}

#[test]
fn all_validation_errors_are_reported_together() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "weights = 1,x\ncolour = blue\n").unwrap();
    let out = qreduce(&["density", "--config", conf.to_str().unwrap(), "--k", "9:1", "--tol", "-1", "--format", "xml"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    for needle in ["unknown key \"colour\"", "weights:", "k:", "tol:", "format:", "symbol: required", "f: required"] {
        assert!(err.contains(needle), "{needle} not in {err}");
    }
}

#[test]
fn symbol_errors_cite_offsets() {
    let out = qreduce(&["op", "--weights", "1,1", "--k", "2", "--symbol", "z(1) + zb(3)"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("byte"), "{}", stderr(&out));
}

#[test]
fn fit_failure_is_a_numerical_error() {
    let out = qreduce(&["dim", "--weights", "2,4,3", "--k", "1:4", "--fit-order", "2"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn op_matrix_and_spectrum() {
    let lines = ok_lines(&["op", "--weights", "1,1", "--k", "1", "--symbol", "z(1)*zb(2) + z(2)*zb(1)", "--eigenvalues"]);
    let eig: Vec<f64> = lines[0]["eigenvalues"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(eig.len(), 2);
    assert!((eig[0] + eig[1]).abs() < 1e-12 && eig[1] > 0.0);
    let exact = ok_lines(&["op", "--weights", "1,1", "--k", "1", "--symbol", "z(1)*zb(2) + z(2)*zb(1)", "--exact"]);
    assert_eq!(exact[0]["entries"].as_array().unwrap().len(), 2);

    let out = qreduce(&["op", "--weights", "1,1", "--k", "2", "--symbol", "z(1)*zb(2)", "--eigenvalues"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not Hermitian"));
}

#[test]
fn basis_and_reduce_agree_on_dimensions() {
    let basis = ok_lines(&["basis", "--weights", "1,2,3", "--k", "6:8"]);
    let reduce = ok_lines(&["reduce", "--weights", "1,2,3", "--k", "6:8"]);
    for (b, r) in basis.iter().zip(&reduce) {
        assert_eq!(b["dim"], r["dim"]);
        let n = b["dim"].as_u64().unwrap() as usize;
        assert_eq!(b["indices"].as_array().unwrap().len(), n);
        let vv = r["vstar_v"].as_array().unwrap();
        assert_eq!(vv.len(), n);
        assert!(vv.iter().all(|x| x.as_f64().unwrap() > 0.0));
    }
}
