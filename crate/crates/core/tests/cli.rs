mod common;

use std::path::Path;
use std::process::{Command, Output};

use mdew::data::{load_csv, load_unlabeled_csv, write_csv, DEFAULT_MISSING_TOKENS};

fn mdew(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdew")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ampute_impute_fit_predict_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_csv(&common::correlated(150, 4, 0.6, 1), &d.join("full.csv"), "y").unwrap();

    ok(&mdew(
        &["ampute", "--input", "full.csv", "--target", "y", "--mechanism", "mar", "--seed", "2", "--out", "masked.csv", "--plan", "plan.json"],
        d,
    ));
    let masked = load_csv(&d.join("masked.csv"), "y", &DEFAULT_MISSING_TOKENS).unwrap();
    assert!(masked.missing_count() > 0);
    let plan: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["plan"]["masked_columns"].as_array().unwrap().len(), 2);

    ok(&mdew(&["impute", "--input", "masked.csv", "--target", "y", "--imputer", "knn", "--out", "filled.csv"], d));
    let filled = load_csv(&d.join("filled.csv"), "y", &DEFAULT_MISSING_TOKENS).unwrap();
    assert_eq!(filled.missing_count(), 0);
    assert_eq!(filled.nrows(), 150);

    std::fs::write(
        d.join("pool.toml"),
        "imputers = [\"mean\", \"knn\"]\nclassifiers = [\"rf\"]\n[imputer.trees]\nn_trees = 5\n[classifier]\nn_trees = 5\n",
    )
    .unwrap();
    ok(&mdew(&["fit", "--input", "masked.csv", "--target", "y", "--pool", "pool.toml", "--out", "ctx"], d));
    assert!(d.join("ctx/pipelines.json").exists());
    assert!(d.join("ctx/errors.csv").exists());

    // unlabeled input: drop the target column by rewriting without it
    let text = std::fs::read_to_string(d.join("masked.csv")).unwrap();
    let unlabeled: String = text
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
        .collect();
    std::fs::write(d.join("unlabeled.csv"), unlabeled).unwrap();
    assert_eq!(load_unlabeled_csv(&d.join("unlabeled.csv"), &DEFAULT_MISSING_TOKENS).unwrap().ncols(), 4);
    ok(&mdew(&["predict", "--context", "ctx", "--input", "unlabeled.csv", "--out", "scores.csv"], d));
    ok(&mdew(&["predict", "--context", "ctx", "--input", "masked.csv", "--target", "y", "--method", "uma", "--out", "uma.csv"], d));
    let scores = std::fs::read_to_string(d.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 151);
    assert!(scores.lines().next().unwrap().starts_with("row_id,probability,prob:mean+rf,prob:knn+rf,weight:"));

    // long format for the metrics subcommand
    let mut long = String::from("row_id,target,probability,method\n");
    let labels = load_csv(&d.join("masked.csv"), "y", &DEFAULT_MISSING_TOKENS).unwrap();
    let uma = std::fs::read_to_string(d.join("uma.csv")).unwrap();
    for (line_m, (line_u, t)) in scores.lines().skip(1).zip(uma.lines().skip(1).zip(labels.target())) {
        let pm: Vec<&str> = line_m.split(',').collect();
        let pu: Vec<&str> = line_u.split(',').collect();
        long += &format!("{},{t},{},mdew\n{},{t},{},uma\n", pm[0], pm[1], pu[0], pu[1]);
    }
    std::fs::write(d.join("long.csv"), long).unwrap();
    ok(&mdew(&["metrics", "--predictions", "long.csv", "--out", "metrics.json"], d));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("metrics.json")).unwrap()).unwrap();
    assert!(m["methods"].as_array().map_or(m["methods"].is_object(), |a| !a.is_empty()));
    assert!(m["mdew_vs_uma"]["fraction_improved"].is_number());
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "seed = \"zero\"\n").unwrap();
    assert_eq!(mdew(&["run", "--config", "bad.toml"], d).status.code(), Some(2));

    std::fs::write(d.join("bad.csv"), "a,b,y\n1,2,0\n3,x,1\n").unwrap();
    let out = mdew(&["impute", "--input", "bad.csv", "--target", "y", "--imputer", "mean", "--out", "o.csv"], d);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"x\""));

    std::fs::write(d.join("ok.csv"), "a,b,y\n1,2,0\n3,4,1\n").unwrap();
    let out = mdew(&["impute", "--input", "ok.csv", "--target", "y", "--imputer", "nope", "--out", "o.csv"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn csv_loading_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    std::fs::write(&p, "y,a,b\n1,1.5,NA\n0,?,2\n1,,3\n0,4,NaN\n").unwrap();
    let ds = load_csv(&p, "y", &DEFAULT_MISSING_TOKENS).unwrap();
    assert_eq!((ds.nrows(), ds.ncols()), (4, 2));
    assert_eq!(ds.column_names(), ["a", "b"]);
    assert_eq!(ds.target(), [1, 0, 1, 0]);
    assert_eq!(ds.missing_count(), 4);
    assert_eq!(ds.observed(0, 0), Some(1.5));

    std::fs::write(&p, "a,y\n1,2\n").unwrap();
    assert_eq!(load_csv(&p, "y", &DEFAULT_MISSING_TOKENS).unwrap_err().exit_code(), 3);
    std::fs::write(&p, "a,y\n1,\n").unwrap();
    assert!(load_csv(&p, "y", &DEFAULT_MISSING_TOKENS).is_err());
    std::fs::write(&p, "a,a,y\n1,2,0\n").unwrap();
    assert!(load_csv(&p, "y", &DEFAULT_MISSING_TOKENS).is_err());
    std::fs::write(&p, "a,y\n").unwrap();
    assert!(load_csv(&p, "y", &DEFAULT_MISSING_TOKENS).is_err());
    assert!(load_csv(&p, "z", &DEFAULT_MISSING_TOKENS).is_err());
}
