use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn curator(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curator"))
        .args(args)
        .env("CURATOR_LOG", "error")
        .output()
        .expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path) -> String {
    let out = path(dir, "data");
    let o = curator(&[
        "gen-synth",
        "--out",
        &out,
        "--n-items",
        "30",
        "--n-clusters",
        "3",
        "--seed",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn select_cdal_writes_budget_ids() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = path(dir.path(), "r.json");
    let o = curator(&[
        "select-cdal",
        "--pred",
        &format!("{data}/predictions.jsonl"),
        "--budget",
        "5",
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&out);
    assert_eq!(r["method"], "cdal");
    assert_eq!(r["selected"].as_array().unwrap().len(), 5);
    assert_eq!(r["diagnostics"]["objective_trace"].as_array().unwrap().len(), 5);
    assert!(fs::read_to_string(&out).unwrap().ends_with("}\n"));
}

#[test]
fn malformed_predictions_exit_1_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = path(dir.path(), "p.jsonl");
    fs::write(
        &bad,
        "{\"item_id\":\"a\",\"regions\":[{\"w\":1,\"p\":[0.5,0.5]}]}\n\n{\"item_id\":\"b\",\"regions\":[{\"w\":-1,\"p\":[0.5,0.5]}]}\n",
    )
    .unwrap();
    let o = curator(&[
        "select-cdal",
        "--pred",
        &bad,
        "--budget",
        "1",
        "--out",
        &path(dir.path(), "r.json"),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("p.jsonl: line 3:"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    let o = curator(&["select-cdal", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(curator(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(curator(&["select-entropy", "--pred", "x.jsonl"]).status.code(), Some(2));
    assert_eq!(
        curator(&[
            "select-entropy",
            "--pred",
            "x",
            "--budget",
            "1",
            "--out",
            "y",
            "--threads",
            "0"
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(curator(&["--help"]).status.code(), Some(0));
}

#[test]
fn repair_add_needs_one_complete_mode() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = path(dir.path(), "r.json");
    let preds = format!("{data}/predictions.jsonl");
    let o = curator(&[
        "repair-add",
        "--pred",
        &preds,
        "--pool-pred",
        &preds,
        "--budget",
        "2",
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("--groups"));
    let o = curator(&[
        "repair-add",
        "--labels",
        &format!("{data}/labels.jsonl"),
        "--budget",
        "2",
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn repair_add_proxy_mode() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let text = fs::read_to_string(format!("{data}/predictions.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let cur = path(dir.path(), "cur.jsonl");
    let pool = path(dir.path(), "pool.jsonl");
    fs::write(&cur, lines[..20].join("\n")).unwrap();
    fs::write(&pool, lines[20..].join("\n")).unwrap();
    let out = path(dir.path(), "r.json");
    let o = curator(&[
        "repair-add",
        "--pred",
        &cur,
        "--pool-pred",
        &pool,
        "--groups",
        &format!("{data}/groups.jsonl"),
        "--budget",
        "3",
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&out);
    assert_eq!(r["added"].as_array().unwrap().len(), 3);
    assert_eq!(r["kept"].as_array().unwrap().len(), 23);
}

#[test]
fn repair_remove_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let repair = path(dir.path(), "repair.json");
    let o = curator(&[
        "repair-remove",
        "--labels",
        &format!("{data}/labels.jsonl"),
        "--target",
        "20",
        "--out",
        &repair,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&repair);
    assert_eq!(r["kept"].as_array().unwrap().len(), 20);
    assert_eq!(r["removed"].as_array().unwrap().len(), 10);
    assert!(r["final_objective"].as_f64().unwrap() <= r["initial_objective"].as_f64().unwrap());

    let eval = path(dir.path(), "eval.json");
    let o = curator(&[
        "eval",
        "--pred",
        &format!("{data}/predictions.jsonl"),
        "--selection",
        &repair,
        "--labels",
        &format!("{data}/labels.jsonl"),
        "--out",
        &eval,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let e = json(&eval);
    assert_eq!(e["selected"], 20);
    assert_eq!(e["clusters_total"], 3);
    assert!((e["fairness_objective"].as_f64().unwrap() - r["final_objective"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn select_random_respects_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let preds = format!("{data}/predictions.jsonl");
    let run = |seed: &str, name: &str| {
        let out = path(dir.path(), name);
        assert!(curator(&[
            "select-random",
            "--pred",
            &preds,
            "--budget",
            "4",
            "--seed",
            seed,
            "--out",
            &out
        ])
        .status
        .success());
        json(&out)
    };
    let a = run("5", "a.json");
    assert_eq!(a, run("5", "b.json"));
    assert_ne!(a["selected"], run("6", "c.json")["selected"]);
    assert_eq!(a["diagnostics"]["seed"], 5);
}

#[test]
fn config_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let preds = format!("{data}/predictions.jsonl");
    let out = path(dir.path(), "r.json");
    let cfg = path(dir.path(), "cfg.json");
    for bad in [
        r#"{"alpha": 2}"#,
        r#"{"eps": 0.5}"#,
        r#"{"unknown": 1}"#,
        r#"{"eps": 0.2}"#,
    ] {
        fs::write(&cfg, bad).unwrap();
        let o = curator(&[
            "--config",
            &cfg,
            "select-cdal",
            "--pred",
            &preds,
            "--budget",
            "2",
            "--out",
            &out,
        ]);
        assert_eq!(o.status.code(), Some(1), "{bad}: {}", stderr(&o));
        assert!(stderr(&o).contains("config"), "{}", stderr(&o));
    }
    fs::write(&cfg, r#"{"class_mask": [0, 1], "d_max": 5.0}"#).unwrap();
    let o = curator(&[
        "--config",
        &cfg,
        "select-cdal",
        "--pred",
        &preds,
        "--budget",
        "2",
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = json(&out)["diagnostics"]["objective_trace"].clone();
    assert!(trace.as_array().unwrap().iter().all(|v| v.as_f64().unwrap() <= 5.0));
}

#[test]
fn lenient_ignores_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let preds = path(dir.path(), "p.jsonl");
    fs::write(
        &preds,
        "{\"item_id\":\"a\",\"extra\":1,\"regions\":[{\"w\":1,\"p\":[0.9,0.1]}]}\n{\"item_id\":\"b\",\"regions\":[{\"w\":1,\"p\":[0.2,0.8],\"box\":[]}]}\n",
    )
    .unwrap();
    let out = path(dir.path(), "r.json");
    let strict = curator(&["select-entropy", "--pred", &preds, "--budget", "1", "--out", &out]);
    assert_eq!(strict.status.code(), Some(1));
    assert!(stderr(&strict).contains("unknown key `extra`"));
    let lenient = curator(&[
        "--lenient",
        "select-entropy",
        "--pred",
        &preds,
        "--budget",
        "1",
        "--out",
        &out,
    ]);
    assert!(lenient.status.success(), "{}", stderr(&lenient));
    assert_eq!(json(&out)["selected"][0], "b");
}

#[test]
fn ada_anchor_writes_recommendations_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let preds = format!("{data}/predictions.jsonl");
    let out = path(dir.path(), "recs.jsonl");
    let o = curator(&[
        "ada-anchor",
        "--pred",
        &preds,
        "--train",
        &preds,
        "--budget",
        "6",
        "--per-frame-max",
        "1",
        "--alpha",
        "1",
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs: Vec<Value> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(!recs.is_empty());
    let total: f64 = recs.iter().map(|r| r["est_weight"].as_f64().unwrap()).sum();
    assert!(total <= 6.0);
    let ids: std::collections::BTreeSet<&str> = recs.iter().map(|r| r["item_id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), recs.len());
    let summary = json(&format!("{out}.summary.json"));
    assert_eq!(summary["recommendations"], recs.len());
    assert!((summary["total_weight"].as_f64().unwrap() - total).abs() < 1e-9);
}

#[test]
fn ada_augment_scores_views() {
    let dir = tempfile::tempdir().unwrap();
    let preds = path(dir.path(), "views.jsonl");
    let same = "{\"item_id\":\"same\",\"view_id\":VIEW,\"regions\":[{\"w\":1,\"p\":[0.7,0.3]}]}";
    let diff = "{\"item_id\":\"diff\",\"view_id\":VIEW,\"regions\":[{\"w\":1,\"p\":[P,Q]}]}";
    let lines = [
        same.replace("VIEW", "0"),
        same.replace("VIEW", "1"),
        diff.replace("VIEW", "0").replace("P", "0.9").replace("Q", "0.1"),
        diff.replace("VIEW", "1").replace("P", "0.55").replace("Q", "0.45"),
    ];
    fs::write(&preds, lines.join("\n") + "\n").unwrap();
    let out = path(dir.path(), "recs.jsonl");
    let o = curator(&["ada-augment", "--pred", &preds, "--budget", "10", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs: Vec<Value> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(recs[0]["item_id"], "diff");
    assert!(recs[0]["score"].as_f64().unwrap() > 0.0);
    assert_eq!(recs[1]["item_id"], "same");
    assert_eq!(recs[1]["score"].as_f64().unwrap(), 0.0);

    fs::write(&preds, lines[..3].join("\n")).unwrap();
    let o = curator(&["ada-augment", "--pred", &preds, "--budget", "10", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("item `diff`"), "{}", stderr(&o));
}

#[test]
fn gen_synth_rejects_bad_spec() {
    let dir = tempfile::tempdir().unwrap();
    let o = curator(&[
        "gen-synth",
        "--out",
        &path(dir.path(), "d"),
        "--n-items",
        "2",
        "--n-clusters",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n_clusters"), "{}", stderr(&o));
}

#[test]
fn unknown_preselected_id_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let o = curator(&[
        "select-cdal",
        "--pred",
        &format!("{data}/predictions.jsonl"),
        "--budget",
        "2",
        "--preselected",
        "item-00001,nope",
        "--out",
        &path(dir.path(), "r.json"),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope"), "{}", stderr(&o));
}
