use std::process::{Command, Output};

use serde_json::Value;

fn convfy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convfy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn verify_report_schema() {
    let out = convfy(&[
        "verify",
        "--task",
        "multiclass:4",
        "--entropy",
        "shannon",
        "--trials",
        "300",
        "--seed",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        [
            "task",
            "entropy",
            "link",
            "trials",
            "seed",
            "violations",
            "max_ratio"
        ]
    );
    assert_eq!(v["task"], "multiclass:4");
    assert_eq!(v["link"], "argmax");
    assert_eq!(v["violations"], 0);
    assert!(v["max_ratio"].as_f64().unwrap() <= 1.0 + 1e-9);
}

#[test]
fn verify_records_and_reproducibility() {
    let args = [
        "verify",
        "--task",
        "hamming:3",
        "--entropy",
        "sqnorm",
        "--link",
        "sparse",
        "--trials",
        "100",
        "--records",
    ];
    let a = convfy(&args);
    let b = convfy(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    let records = v["records"].as_array().unwrap();
    assert_eq!(records.len(), 100);
    assert!(records
        .iter()
        .all(|r| r["bound_constant"] == 4.0 && r["violated"] == false));
}

#[test]
fn verify_random_link_on_topk() {
    let out = convfy(&[
        "verify",
        "--task",
        "topk:5:2",
        "--entropy",
        "sqnorm",
        "--link",
        "random",
        "--trials",
        "200",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["link"], "random");
}

#[test]
fn matrix_task_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    std::fs::write(&path, "a,b,c\n0,1,2\n1,0,1\n2,1,0\n").unwrap();
    let task = format!("matrix:{}", path.display());
    let out = convfy(&["verify", "--task", &task, "--trials", "100", "--link", "sparse"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let missing = format!("matrix:{}", dir.path().join("nope.csv").display());
    assert_eq!(convfy(&["verify", "--task", &missing]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(convfy(&["verify", "--task", "cube:3"]).status.code(), Some(2));
    assert_eq!(
        convfy(&["verify", "--task", "multiclass:3", "--entropy", "gini"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        convfy(&["verify", "--task", "multiclass:3", "--link", "best"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        convfy(&["verify", "--task", "hamming:2", "--entropy", "shannon"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        convfy(&["verify", "--task", "multiclass:3", "--trials", "0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(convfy(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(convfy(&[]).status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_coarse_step_degrades() {
    let fine = convfy(&[
        "gradcheck",
        "--task",
        "multiclass:5",
        "--entropy",
        "shannon",
        "--trials",
        "50",
    ]);
    assert_eq!(fine.status.code(), Some(0));
    let fine = json(&fine)["max_rel_error"].as_f64().unwrap();
    assert!(fine <= 1e-4);
    let coarse = convfy(&[
        "gradcheck",
        "--task",
        "multiclass:5",
        "--trials",
        "50",
        "--step",
        "0.1",
    ]);
    let coarse = json(&coarse)["max_rel_error"].as_f64().unwrap();
    assert!(coarse > fine);
}

#[test]
fn propcheck_suites() {
    let out = convfy(&[
        "propcheck",
        "--task",
        "topk:5:2",
        "--entropy",
        "sqnorm",
        "--trials",
        "200",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let names: Vec<&str> = v["suites"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    for expected in [
        "midpoint_convexity",
        "lipschitz_gradient",
        "nonnegativity",
        "decomposition_identity",
        "vertex_dominance",
    ] {
        assert!(names.contains(&expected), "{expected}");
    }
}

#[test]
fn fishercheck_hamming_reports_marginals() {
    let out = convfy(&[
        "fishercheck",
        "--task",
        "hamming:2",
        "--entropy",
        "sqnorm",
        "--trials",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(v["max_error"].as_f64().unwrap() <= 1e-3);
    assert!(v["records"][0]["marginal_error"].is_number());
}

#[test]
fn train_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let out = convfy(&[
        "train",
        "--task",
        "multiclass:3",
        "--samples",
        "100",
        "--epochs",
        "20",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("epoch,mean_surrogate_regret,mean_target_regret,grad_norm")
    );
    assert_eq!(lines.count(), 21);
}

#[test]
fn train_with_zero_lr_is_flat() {
    let out = convfy(&[
        "train",
        "--task",
        "multiclass:3",
        "--samples",
        "50",
        "--epochs",
        "3",
        "--lr",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[1..] == rows[0][1..]));
}

#[test]
fn solve_multiclass_closed_form() {
    let out = convfy(&["solve", "--task", "multiclass:3", "--theta", "2,0,-1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["solution"]["method"], "sort_threshold");
    assert_eq!(v["solution"]["pi"], serde_json::json!([1.0, 0.0, 0.0]));
    assert_eq!(v["prediction"], 1);
}

#[test]
fn solve_hamming_reports_bits() {
    let out = convfy(&[
        "solve",
        "--task",
        "hamming:2",
        "--entropy",
        "sqnorm",
        "--theta",
        "-0.9,0.4",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["solution"]["method"], "box_form");
    assert_eq!(v["prediction_bits"].as_array().unwrap().len(), 2);
}

#[test]
fn solve_rejects_wrong_length() {
    let out = convfy(&["solve", "--task", "multiclass:3", "--theta", "1,2"]);
    assert_eq!(out.status.code(), Some(2));
}
