use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multifun-dag")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn generate(dir: &Path, name: &str, config: &str) -> PathBuf {
    let cfg = write(dir, &format!("{name}.json"), config);
    let out = dir.join(name);
    let res = bin(&["generate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    out
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const MINIMAL: &str = r#"{"P": 2, "L": 1, "K": 2, "T": 16, "N": 10, "seed": 7}"#;

#[test]
fn generate_writes_one_row_per_value() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path(), "d", MINIMAL);
    let text = fs::read_to_string(data.join("data.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sample,node,function,time_index,value"));
    assert_eq!(lines.count(), 10 * 2 * 16);

    let manifest = read_json(&data.join("manifest.json"));
    assert_eq!(manifest["P"], 2);
    assert_eq!(manifest["grid"].as_array().unwrap().len(), 16);
    assert_eq!(manifest["has_truth"], true);
    assert!(data.join("truth_params.json").exists());
}

#[test]
fn zero_edge_probability_gives_empty_adjacency() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path(), "d", r#"{"P": 4, "L": 1, "K": 2, "T": 8, "N": 5, "edge_prob": 0}"#);
    let adj = fs::read_to_string(data.join("adjacency.csv")).unwrap();
    assert_eq!(adj.lines().count(), 4);
    assert!(adj.lines().all(|l| l.split(',').all(|v| v == "0")));
}

#[test]
fn generate_is_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = generate(dir.path(), "a", MINIMAL);
    let b = generate(dir.path(), "b", MINIMAL);
    assert_eq!(fs::read(a.join("data.csv")).unwrap(), fs::read(b.join("data.csv")).unwrap());

    let cfg = write(dir.path(), "c.json", MINIMAL);
    let c = dir.path().join("c");
    assert_eq!(code(&bin(&["generate", "--config", s(&cfg), "--out", s(&c), "--seed", "8"])), 0);
    assert_ne!(fs::read(a.join("data.csv")).unwrap(), fs::read(c.join("data.csv")).unwrap());
}

#[test]
fn mfgm_runs_a_single_iteration() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path(), "d", r#"{"P": 3, "L": 1, "K": 2, "T": 10, "N": 40, "seed": 1}"#);
    let model = dir.path().join("m.json");
    let res = bin(&["fit", "--data", s(&data), "--out", s(&model), "--method", "mfgm", "--lambda", "0.05"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let doc = read_json(&model);
    assert_eq!(doc["report"]["iterations"], 1);
    assert_eq!(doc["report"]["method"], "mfgm");
}

#[test]
fn missing_manifest_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let res = bin(&["fit", "--data", s(dir.path()), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("manifest.json"), "{}", stderr(&res));
}

#[test]
fn malformed_data_reports_the_line() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path(), "d", MINIMAL);
    let path = data.join("data.csv");
    let text = fs::read_to_string(&path).unwrap();
    let broken: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 4 { "0,0,0,3,not-a-number".to_string() } else { l.to_string() })
        .collect();
    fs::write(&path, broken.join("\n")).unwrap();
    let res = bin(&["fit", "--data", s(&data), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("data.csv:5:"), "{}", stderr(&res));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path(), "d", MINIMAL);
    let cfg = write(dir.path(), "fit.json", r#"{"lamda": 0.05}"#);
    let res = bin(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("lamda"), "{}", stderr(&res));
}

#[test]
fn unconverged_fit_still_writes_the_model() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path(), "d", r#"{"P": 3, "L": 1, "K": 2, "T": 10, "N": 40, "seed": 2}"#);
    let cfg = write(dir.path(), "fit.json", r#"{"max_em_iter": 1, "lambda": 0.05}"#);
    let model = dir.path().join("m.json");
    let res = bin(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&model)]);
    assert_eq!(code(&res), 4, "{}", stderr(&res));
    assert_eq!(read_json(&model)["report"]["converged"], false);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path(), "d", MINIMAL);
    let blocker = write(dir.path(), "blocker", "");
    let res = bin(&["fit", "--data", s(&data), "--method", "mfgm", "--out", s(&blocker.join("m.json"))]);
    assert_eq!(code(&res), 3, "{}", stderr(&res));
}

#[test]
fn refit_from_own_output_stops_at_once() {
    let dir = TempDir::new().unwrap();
    let data = generate(
        dir.path(),
        "d",
        r#"{"P": 3, "L": 1, "K": 2, "T": 12, "N": 300, "edge_prob": 0.7, "r2_true": 0.001, "seed": 3}"#,
    );
    // Inner solves must converge for a fixed point; the default cap can stop
    // stiff warm-dual solves early.
    let cfg = write(dir.path(), "fit.json", r#"{"lambda": 0.05, "inner_max_iter": 20000}"#);
    let first = dir.path().join("first.json");
    let res = bin(&["fit", "--data", s(&data), "--out", s(&first), "--config", s(&cfg)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));

    let second = dir.path().join("second.json");
    let res = bin(&["fit", "--data", s(&data), "--out", s(&second), "--config", s(&cfg), "--init", s(&first)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let d0 = read_json(&second)["report"]["d_history"][0].as_f64().unwrap();
    assert!(d0 < 10.0 * 1e-4, "first step moved {d0}");
}

fn eval(dir: &Path, model: &Path, data: &Path) -> Value {
    let out = dir.join("metrics.json");
    let res = bin(&["eval", "--model", s(model), "--data", s(data), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    read_json(&out)
}

#[test]
fn truth_scores_perfectly_against_itself() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path(), "d", r#"{"P": 4, "L": 2, "K": 2, "T": 10, "N": 20, "edge_prob": 0.6, "seed": 5}"#);
    let m = eval(dir.path(), &data.join("truth_params.json"), &data);
    assert_eq!(m["f1"], 1.0);
    assert!(m["c_error"].as_f64().unwrap() < 1e-10);
}

#[test]
fn zero_model_recalls_nothing() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path(), "d", r#"{"P": 3, "L": 1, "K": 2, "T": 10, "N": 20, "edge_prob": 1, "seed": 5}"#);
    let mut params: multifun_dag::ModelParams =
        serde_json::from_str(&fs::read_to_string(data.join("truth_params.json")).unwrap()).unwrap();
    for b in params.cl_blocks.iter_mut() {
        b.fill(0.0);
    }
    let model = write(dir.path(), "zero.json", &serde_json::to_string(&params).unwrap());
    let m = eval(dir.path(), &model, &data);
    assert_eq!(m["recall"], 0.0);
    assert_eq!(m["tp"], 0);
    assert_eq!(m["fn"], 3);
}

#[test]
fn f1_agrees_with_reported_counts() {
    let dir = TempDir::new().unwrap();
    let data = generate(dir.path(), "d", r#"{"P": 4, "L": 1, "K": 2, "T": 10, "N": 30, "edge_prob": 0.5, "seed": 6}"#);
    let model = dir.path().join("m.json");
    let res = bin(&["fit", "--data", s(&data), "--out", s(&model), "--method", "mfgm", "--lambda", "0.02"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let m = eval(dir.path(), &model, &data);
    let count = |k: &str| m[k].as_u64().unwrap() as f64;
    let (tp, fp, fn_) = (count("tp"), count("fp"), count("fn"));
    let precision = if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) };
    let recall = if tp + fn_ == 0.0 { 1.0 } else { tp / (tp + fn_) };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    assert!((m["f1"].as_f64().unwrap() - f1).abs() < 1e-12);
}

fn read_csv(p: &Path) -> (csv::StringRecord, Vec<csv::StringRecord>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let header = r.headers().unwrap().clone();
    (header, r.records().map(|r| r.unwrap()).collect())
}

fn column(header: &csv::StringRecord, name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn benchmark_grid_summary_and_resume() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "bench.json",
        r#"{"N": [20, 30], "P": 3, "L0": 1, "K0": 2, "T": 10, "lambda": 0.05, "method": "mfgm", "seeds": 2, "threads": 2}"#,
    );
    let out = dir.path().join("res.csv");
    let res = bin(&["benchmark", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));

    let (header, rows) = read_csv(&out);
    assert_eq!(rows.len(), 4);
    let (f1, n) = (column(&header, "f1"), column(&header, "N"));
    let (sh, summary) = read_csv(&dir.path().join("res_summary.csv"));
    assert_eq!(summary.len(), 2);
    for cell in &summary {
        let cell_n = &cell[column(&sh, "N")];
        let vals: Vec<f64> = rows.iter().filter(|r| &r[n] == cell_n).map(|r| r[f1].parse().unwrap()).collect();
        let want = vals.iter().sum::<f64>() / vals.len() as f64;
        let got: f64 = cell[column(&sh, "f1_mean")].parse().unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    // Mark the first row, drop the last one, and rerun: only the missing
    // job is recomputed.
    let mut w = csv::Writer::from_path(&out).unwrap();
    w.write_record(&header).unwrap();
    for (i, r) in rows.iter().enumerate().take(3) {
        let mut rec: Vec<String> = r.iter().map(String::from).collect();
        if i == 0 {
            rec[f1] = "0.123456".into();
        }
        w.write_record(&rec).unwrap();
    }
    w.flush().unwrap();
    drop(w);
    let res = bin(&["benchmark", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let (_, again) = read_csv(&out);
    assert_eq!(again.len(), 4);
    assert_eq!(&again[0][f1], "0.123456");
    assert_eq!(again[3], rows[3]);
}

#[test]
fn benchmark_with_only_failures_exits_with_input_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "bench.json",
        r#"{"N": 10, "P": 2, "L0": 1, "K0": 12, "T": 10, "lambda": 0.05, "method": "mfgm", "seeds": 1}"#,
    );
    let out = dir.path().join("res.csv");
    let res = bin(&["benchmark", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&res), 2, "{}", stderr(&res));
    let (header, rows) = read_csv(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][column(&header, "status")], "error");
}
