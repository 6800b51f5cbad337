use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run_with(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pairsim"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("PAIRSIM_THREADS", t),
        None => cmd.env_remove("PAIRSIM_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn run(args: &[&str]) -> Output {
    run_with(args, None)
}

fn json_of(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

fn assert_schema(name: &str, value: &Value) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("schemas/{name}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

fn matrix(v: &Value) -> Vec<Vec<f64>> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
        .collect()
}

#[test]
fn every_json_output_matches_its_schema() {
    let het = data("heterogamous.json");
    let hom = data("homogamous.json");
    let fb = data("fine_balance.json");
    let scalar = data("scalar.json");
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("trajectory", vec!["simulate", "--params", &het, "--seed", "1"]),
        ("trajectory", vec!["simulate", "--params", &hom, "--seed", "1", "--t-end", "0.5"]),
        ("replicates", vec!["simulate", "--params", &het, "--replicates", "50"]),
        ("pattern", vec!["pattern", "--params", &fb]),
        ("classify", vec!["classify", "--params", &het]),
        ("fine_balance", vec!["fine-balance", "--params", &fb]),
        ("fine_balance", vec!["fine-balance", "--params", &hom]),
        ("sym2x2", vec!["sym2x2", "--params", &hom]),
        ("sym2x2", vec!["sym2x2", "--params", &het]),
        ("converge", vec!["converge", "--params", &hom, "--n-list", "50,200", "--replicates", "3"]),
        ("clt", vec!["clt", "--params", &scalar, "--n", "200", "--replicates", "1000"]),
        ("levelcurves", vec!["levelcurves", "--grid", "0:2:5"]),
    ];
    for (schema, args) in cases {
        assert_schema(schema, &json_of(&args));
    }
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let hom = data("homogamous.json");
    let het = data("heterogamous.json");
    let commands: Vec<Vec<&str>> = vec![
        vec!["simulate", "--params", &hom, "--seed", "42"],
        vec!["simulate", "--params", &het, "--seed", "42", "--replicates", "500"],
        vec!["converge", "--params", &hom, "--n-list", "50,100", "--replicates", "4", "--seed", "9"],
        vec!["clt", "--params", &hom, "--replicates", "1000", "--n", "100", "--seed", "5"],
        vec!["fluid", "--params", &hom, "--t-end", "2"],
        vec!["levelcurves", "--grid", "0.1:2:7"],
    ];
    for args in commands {
        let a = run_with(&args, Some("1"));
        let b = run_with(&args, Some("4"));
        let c = run_with(&args, None);
        assert!(a.status.success(), "{args:?}");
        assert_eq!(a.stdout, b.stdout, "{args:?}");
        assert_eq!(a.stdout, c.stdout, "{args:?}");
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let hom = data("homogamous.json");
    let a = run(&["simulate", "--params", &hom, "--seed", "1"]);
    let b = run(&["simulate", "--params", &hom, "--seed", "2"]);
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn heterogamous_rates_classify_as_heterogamous() {
    let v = json_of(&["classify", "--params", &data("heterogamous.json")]);
    assert_eq!(v["class"], "heterogamous");
    let v = json_of(&["classify", "--params", &data("homogamous.json")]);
    assert_eq!(v["class"], "homogamous");
    let v = json_of(&["classify", "--params", &data("homogamous.json"), "--set", "pi=[[2,1.5],[1.5,1]]"]);
    assert_eq!(v["class"], "panmictic");
}

#[test]
fn fine_balance_pattern_is_the_outer_product() {
    let v = json_of(&["pattern", "--params", &data("fine_balance.json"), "--eps", "1e-8"]);
    let (x, y) = ([0.2, 0.3, 0.5], [0.3, 0.3, 0.4]);
    let p = matrix(&v["pattern"]);
    for i in 0..3 {
        for j in 0..3 {
            assert!((p[i][j] - x[i] * y[j]).abs() <= 1e-8);
        }
    }
    assert!(v["error_bound"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn level_curves_are_symmetric_and_panmictic_on_the_anti_diagonal() {
    let v = json_of(&["levelcurves", "--grid", "0:2:21"]);
    let axis: Vec<f64> = v["axis"].as_array().unwrap().iter().map(|a| a.as_f64().unwrap()).collect();
    let q = matrix(&v["q12"]);
    for a in 0..axis.len() {
        for b in 0..axis.len() {
            assert!((q[a][b] - q[b][a]).abs() <= 1e-6);
            if (axis[a] + axis[b] - 1.0).abs() < 1e-9 {
                assert!((q[a][b] - 0.25).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn csv_outputs_have_headers() {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let events = dir.join("events.csv");
    let out = run(&["simulate", "--params", &data("heterogamous.json"), "--out", events.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&events).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,i,j"));
    assert_eq!(lines.count(), 8);

    let out = run(&["fluid", "--params", &data("homogamous.json"), "--t-end", "1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("t,Q11,Q12,Q21,Q22\n0,0,0,0,0\n"));

    let grid = dir.join("grid.csv");
    assert!(run(&["levelcurves", "--grid", "0:1:3", "--out", grid.to_str().unwrap()]).status.success());
    assert_eq!(std::fs::read_to_string(&grid).unwrap().lines().count(), 10);
}

#[test]
fn replicator_coordinates_agree_with_fluid_coordinates() {
    let hom = data("homogamous.json");
    let out = run(&["fluid", "--params", &hom, "--t-end", "2", "--coords", "replicator"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last[0], 2.0);
    // Z + Q_tot = 1 and A is on the simplex
    let q_tot: f64 = last[6..].iter().sum();
    assert!((last[5] + q_tot - 1.0).abs() < 1e-7);
    assert!((last[1] + last[2] - 1.0).abs() < 1e-12);
}

#[test]
fn exit_codes_separate_bad_input_from_numerical_failure() {
    let code = |args: &[&str]| run(args).status.code();
    let hom = data("homogamous.json");
    assert_eq!(code(&["classify", "--params", &data("fine_balance.json")]), Some(2));
    assert_eq!(code(&["pattern", "--params", "/nonexistent.json"]), Some(2));
    assert_eq!(code(&["pattern", "--params", &hom, "--eps", "0.5"]), Some(2));
    assert_eq!(code(&["pattern", "--params", &hom, "--set", "pi.0.0=-1"]), Some(2));
    assert_eq!(code(&["simulate", "--params", &data("fine_balance.json")]), Some(2));
    assert_eq!(code(&["levelcurves", "--grid", "2:1:3"]), Some(2));
    assert_eq!(code(&["no-such-command"]), Some(2));
    assert_eq!(run_with(&["classify", "--params", &hom], Some("zero")).status.code(), Some(2));
    assert_eq!(code(&["fluid", "--params", &hom, "--t-end", "1", "--rtol", "1e-30"]), Some(2));
    assert_eq!(code(&["classify", "--params", &hom]), Some(0));
}
