use std::fs;
use std::process::{Command, Output};

use cvarbound::harness::ExperimentRecord;
use cvarbound::tailbounds::DeviationBound;

fn cvarbound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvarbound")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

#[test]
fn estimate_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sample.txt");
    let lines: String = (1..=10).map(|i| format!("{i}\n")).collect();
    fs::write(&path, format!("# ten values\n\n{lines}")).unwrap();
    let o = cvarbound(&["estimate", "--file", path.to_str().unwrap(), "--alpha", "0.9", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["var_hat"], 9.0);
    assert_eq!(v["cvar_hat"], 10.0);
    assert!(v["true_var"].is_null());
}

#[test]
fn estimate_rejects_empty_and_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "").unwrap();
    let o = cvarbound(&["estimate", "--file", empty.to_str().unwrap(), "--alpha", "0.9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty.txt"));
    assert!(o.stdout.is_empty());

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "1.5\n2.5\n# fine\nthree\n").unwrap();
    let o = cvarbound(&["estimate", "--file", bad.to_str().unwrap(), "--alpha", "0.9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    let o = cvarbound(&["estimate", "--file", dir.path().join("absent.txt").to_str().unwrap(), "--alpha", "0.9"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn estimate_from_distribution() {
    let o = cvarbound(&[
        "estimate", "--dist", "gaussian:mu=0,sigma=1", "--n", "1000000", "--seed", "7", "--alpha", "0.95", "--format", "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert!((v["cvar_hat"].as_f64().unwrap() - 2.0627).abs() < 0.02);
    assert!((v["true_cvar"].as_f64().unwrap() - 2.062712807507426).abs() < 1e-12);
}

#[test]
fn dkw_bound_json_round_trips() {
    let o = cvarbound(&["bound", "dkw", "--n", "100", "--eps", "0.1", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let b: DeviationBound = serde_json::from_slice(&o.stdout).unwrap();
    assert!((b.total - 0.27067).abs() < 1e-5);
    for field in ["bound_name", "inputs", "terms", "total", "conditions"] {
        assert!(json(&o).get(field).is_some(), "missing {field}");
    }
}

#[test]
fn infeasible_interval_reports_min_n_before_output() {
    let o = cvarbound(&["bound", "var-interval", "--n", "1000", "--alpha", "0.95", "--s", "0.25"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("10001"));
    assert!(o.stdout.is_empty());
}

#[test]
fn interval_with_simulated_sample() {
    let o = cvarbound(&[
        "bound", "var-interval", "--dist", "gaussian:mu=0,sigma=1", "--n", "20000", "--alpha", "0.9", "--s", "0.3",
        "--seed", "3", "--format", "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&o);
    assert!(v["lower"].as_f64().unwrap() <= v["upper"].as_f64().unwrap());
    assert!(v["confidence_floor"].as_f64().unwrap() > 0.98);
}

#[test]
fn failed_condition_still_exits_zero_with_report() {
    let o = cvarbound(&[
        "bound", "cvar-subexp", "--dist", "exponential:rate=1", "--alpha", "0.95", "--n", "1000", "--eps", "0.5", "--format", "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&o);
    let cond = v["conditions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "subexp_radicand_positive")
        .unwrap()
        .clone();
    assert_eq!(cond["satisfied"], false);
    assert!(cond["observed"].as_f64().unwrap() < 0.0);
    assert!(v["note"].as_str().unwrap().contains("general form"));
}

#[test]
fn human_bound_output_labels_raw_and_clamped() {
    let o = cvarbound(&["bound", "var-deviation", "--dist", "gaussian:mu=0,sigma=1", "--alpha", "0.95", "--n", "100", "--eps", "0.1"]);
    let text = stdout(&o);
    assert!(text.contains("total (raw)") && text.contains("total (clamped"), "{text}");
}

#[test]
fn csv_bound_output_has_header() {
    let o = cvarbound(&["bound", "dkw", "--n", "100", "--eps", "0.1", "--format", "csv"]);
    let text = stdout(&o);
    assert!(text.starts_with("bound_name,section,label,value,satisfied,threshold\n"), "{text}");
}

#[test]
fn sample_sizes() {
    let base = ["samplesize", "var", "--dist", "gaussian:mu=0,sigma=1", "--alpha", "0.95", "--eps", "0.1", "--format", "json"];
    let o = cvarbound(&[&base[..], &["--delta", "0.05"]].concat());
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert_eq!(v["outcome"]["status"], "achieved");
    let n = v["outcome"]["n"].as_u64().unwrap();
    assert!(n.abs_diff(20460) <= 1);
    assert!(v["outcome"]["bound_at_prev"].as_f64().unwrap() > 0.05);

    let o = cvarbound(&[&base[..], &["--delta", "1"]].concat());
    assert_eq!(json(&o)["outcome"]["n"], 1);

    let o = cvarbound(&["samplesize", "cvar", "--dist", "gaussian:mu=0,sigma=1", "--alpha", "0.95", "--eps", "0.5", "--delta", "0.05"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not achievable"));
}

#[test]
fn coverage_experiment_row_is_deterministic() {
    let args = [
        "experiment", "var-coverage", "--dist", "gaussian:mu=0,sigma=1", "--alpha", "0.9", "--n", "10000", "--s", "0.3", "--R",
        "2000", "--seed", "42", "--format", "csv",
    ];
    let first = cvarbound(&args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let mut reader = csv::Reader::from_reader(first.stdout.as_slice());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["kind", "family", "params", "alpha", "n", "s_or_eps", "R", "seed", "frequency", "stderr", "bound_raw", "bound_clamped", "pass"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][12], "true");
    assert!(rows[0][8].parse::<f64>().unwrap() >= 0.9862);

    let second = cvarbound(&[&args[..], &["--threads", "2"]].concat());
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn invalid_plan_fails_before_output() {
    let o = cvarbound(&[
        "experiment", "var-deviation", "--dist", "gaussian:mu=0,sigma=1", "--alpha", "0.9", "--n", "100", "--eps", "0.1", "--R", "0",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    let o = cvarbound(&[
        "experiment", "cvar-deviation", "--dist", "exponential:rate=1", "--alpha", "0.95", "--n", "100", "--eps", "0.5", "--bound",
        "subexp_simplified",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
}

#[test]
fn experiment_json_records_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plans.json");
    fs::write(
        &plan,
        r#"[
            {"dist": "gaussian:mu=0,sigma=1", "alpha": 0.95, "kind": "var_deviation", "n": 500, "eps": 0.1, "replications": 200, "master_seed": 1},
            {"dist": "uniform:a=0,b=1", "alpha": 0.9, "kind": "cvar_upper_deviation", "n": 500, "eps": 0.05, "bound": "subgauss_general", "replications": 200, "master_seed": 1},
            {"dist": "exponential:rate=1", "alpha": 0.9, "kind": "var_coverage", "n": 5000, "s": 0.3, "replications": 100, "master_seed": 2}
        ]"#,
    )
    .unwrap();
    let out = dir.path().join("records.json");
    let o = cvarbound(&["experiment", "--plan", plan.to_str().unwrap(), "--format", "json", "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let records: Vec<ExperimentRecord> = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(records.len(), 3);
    for r in &records {
        assert_eq!(r.recompute_pass(), r.pass);
        assert!((r.empirical_frequency * r.plan.replications as f64 - r.hits as f64).abs() < 1e-9);
    }
}

#[test]
fn convergence_experiment() {
    let o = cvarbound(&[
        "experiment", "convergence", "--dist", "gaussian:mu=0,sigma=1", "--alpha", "0.95", "--grid", "1000,4000,16000", "--R", "200",
        "--format", "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["points"].as_array().unwrap().len(), 3);
    assert!(v["var_slope"].as_f64().unwrap() < 0.0);
    let o = cvarbound(&["experiment", "convergence", "--dist", "gaussian:mu=0,sigma=1", "--alpha", "0.95", "--grid", "1000,4000"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn output_errors_and_usage_exit_codes() {
    let o = cvarbound(&["bound", "dkw", "--n", "100", "--eps", "0.1", "--output", "/nonexistent-dir/out.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(cvarbound(&["bound", "dkw", "--n", "100", "--eps", "0.1", "--bogus"]).status.code(), Some(1));
    assert_eq!(cvarbound(&["--help"]).status.code(), Some(0));
    let o = cvarbound(&["estimate", "--dist", "weibull:k=1", "--n", "10", "--alpha", "0.9"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn conditions_subcommand() {
    let o = cvarbound(&["conditions", "--dist", "gaussian:mu=0,sigma=1", "--alpha", "0.99", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    let sigma = v["conditions"].as_array().unwrap().iter().find(|c| c["name"] == "subgauss_sigma").unwrap().clone();
    assert!((sigma["threshold"].as_f64().unwrap() - 0.7666).abs() < 1e-3);
    assert_eq!(sigma["satisfied"], false);
}
