use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn hypojump(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypojump")).args(args).output().expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut full: Vec<&str> = args.to_vec();
    let out_dir = dir.to_str().unwrap();
    full.extend(["--out-dir", out_dir]);
    hypojump(&full)
}

#[test]
fn conditions_on_kalman_model_reports_rank_two() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &["conditions"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let mut rdr = csv::Reader::from_path(tmp.path().join("conditions.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let kalman = rows.iter().find(|r| &r[0] == "kalman").expect("kalman row");
    assert_eq!(kalman[1].parse::<f64>().unwrap(), 2.0);
    assert_eq!(&kalman[2], "true");
}

#[test]
fn degenerate_model_fails_the_condition_check() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "deg.toml", "[model]\nname = \"degenerate\"\n");
    let out = run_in(&tmp.path().join("out"), &["conditions", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let summary = read_json(&tmp.path().join("out/summary.json"));
    assert_eq!(summary["passed"], Value::Bool(false));
}

#[test]
fn misspelled_key_is_rejected_with_suggestion() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "bad.toml", "[run]\nseed = 1\n\n[measure]\nalpa = 1.0\n");
    let out = run_in(&tmp.path().join("out"), &["tail", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("bad.toml:5"), "{msg}");
    assert!(msg.contains("did you mean `alpha`"), "{msg}");
}

#[test]
fn alpha_out_of_range_names_the_constraint() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "bad.toml", "[measure]\nalpha = 2.5\n");
    let out = run_in(&tmp.path().join("out"), &["void", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("bad.toml:2") && msg.contains("0 < alpha < 2"), "{msg}");
}

#[test]
fn zero_paths_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &["tail", "--paths", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = read_json(&tmp.path().join("error.json"));
    assert_eq!(err["kind"], "config");
    let manifest = read_json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["files"], serde_json::json!(["error.json"]));
}

#[test]
fn invalid_annulus_is_reported_as_diagnostic_json() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "v.toml", "[void]\nr_inner = 0.05\n");
    let out = run_in(&tmp.path().join("out"), &["void", "--paths", "1000", "--config", cfg.to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(0));
    let diag: Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(diag["schema"], "hypojump.error/1");
}

#[test]
fn void_row_matches_the_exact_probability() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "void.toml", "[measure]\ndim = 2\nalpha = 1.0\ntheta0 = 1.0\ntrunc = 0.05\n\n[void]\nwindow = 0.1\nr_inner = 0.1\n");
    let out = run_in(&tmp.path().join("out"), &["void", "--paths", "100000", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let mut rdr = csv::Reader::from_path(tmp.path().join("out/void.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let row = rdr.records().next().unwrap().unwrap();
    let get = |name: &str| row[headers.iter().position(|h| h == name).unwrap()].parse::<f64>().unwrap();
    assert!((get("exact") - (-5.655f64).exp()).abs() < 1e-5);
    assert!((get("empirical") - get("exact")).abs() <= 3.0 * get("stderr"));
}

fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let tmp = TempDir::new().unwrap();
    for (cmd, paths, format) in [("simulate", "2000", "csv"), ("tail", "5000", "csv"), ("charfn", "2000", "json")] {
        let one = tmp.path().join(format!("{cmd}-1"));
        let four = tmp.path().join(format!("{cmd}-4"));
        for (dir, workers) in [(&one, "1"), (&four, "4")] {
            let out = run_in(dir, &[cmd, "--paths", paths, "--workers", workers, "--format", format]);
            assert!(out.status.code().unwrap() <= 1, "{cmd}: {}", stderr(&out));
        }
        let (a, b) = (data_files(&one), data_files(&four));
        assert!(!a.is_empty());
        assert_eq!(a, b, "{cmd} outputs differ between 1 and 4 workers");
    }
}

#[test]
fn manifest_lists_every_output_once() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &["tail", "--paths", "2000", "--seed", "7"]);
    assert!(out.status.code().unwrap() <= 1, "{}", stderr(&out));
    let manifest = read_json(&tmp.path().join("manifest.json"));
    let listed: Vec<String> =
        manifest["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let mut on_disk: Vec<String> = data_files(tmp.path()).into_iter().map(|(n, _)| n).collect();
    let mut sorted = listed.clone();
    sorted.sort();
    sorted.dedup();
    on_disk.sort();
    assert_eq!(sorted.len(), listed.len());
    assert_eq!(sorted, on_disk);
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["paths"], 2000);
    assert!(manifest["timings"]["tail"].as_f64().unwrap() >= 0.0);
}

#[test]
fn digest_is_stable_under_reformatting() {
    let tmp = TempDir::new().unwrap();
    let a = write_config(&tmp, "a.toml", "[measure]\nalpha = 1.0\n[run]\nseed = 3\n");
    let b = write_config(&tmp, "b.toml", "# same values\n[run]\nseed=3\n\n[measure]\n  alpha = 1.0\n");
    let mut digests = Vec::new();
    for (name, cfg) in [("a", &a), ("b", &b)] {
        let dir = tmp.path().join(name);
        let out = run_in(&dir, &["conditions", "--config", cfg.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        digests.push(read_json(&dir.join("manifest.json"))["config_digest"].clone());
    }
    assert_eq!(digests[0], digests[1]);
}
