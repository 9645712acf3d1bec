mod common;

use std::path::Path;
use std::process::{Command, Output};

use rowamp_harness::experiment::{CSV_HEADER, MI_CSV_HEADER};
use serde_json::json;
use tempfile::tempdir;

fn rowamp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rowamp"))
        .args(args)
        .env_remove("ROWAMP_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn missing_config_file_exits_2() {
    let out = rowamp(&["simulate", "--config", "/nonexistent/c.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));
}

#[test]
fn unknown_flag_prints_usage_and_exits_2() {
    let out = rowamp(&["simulate", "--bogus"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("usage"));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("c.json");
    let mut v = common::mini(8, 16, 2, 0.2, 1);
    v["unexpected"] = json!(1);
    common::write_json(&path, &v);
    assert_eq!(code(&rowamp(&["simulate", "--config", path.to_str().unwrap()])), 2);
}

#[test]
fn bad_thread_variable_exits_2() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("c.json");
    common::write_json(&path, &common::mini(8, 16, 2, 0.2, 1));
    let out = Command::new(env!("CARGO_BIN_EXE_rowamp"))
        .args(["simulate", "--config", path.to_str().unwrap()])
        .env("ROWAMP_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_output_follows_documented_header() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("c.json");
    common::write_json(&path, &common::mini(16, 32, 2, 0.2, 3));
    let out_dir = dir.path().join("out");
    let out = rowamp(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(&out_dir.join("mini.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let columns: Vec<&str> = CSV_HEADER.split(',').collect();
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), columns.len(), "{line}");
        assert_eq!(f[0].len(), 16);
        assert!(f[0].chars().all(|c| c.is_ascii_hexdigit()));
        f[1].parse::<f64>().unwrap();
        f[2].parse::<f64>().unwrap();
        f[3].parse::<usize>().unwrap();
        assert_eq!(f[4], "");
        assert!(["ep", "ep-diagonal", "ls"].contains(&f[5]), "{line}");
        assert!(["full", "diagonal", ""].contains(&f[6]), "{line}");
        assert!(f[7] == "final" || f[7].parse::<usize>().is_ok(), "{line}");
        assert!(f[8].parse::<f64>().unwrap().is_finite());
        assert!(f[9].parse::<f64>().unwrap() >= 0.0);
        assert_eq!(f[10], "3");
        assert_eq!(f[11], "0");
        rows += 1;
    }
    // 8 iterations plus a terminal record for each EP variant, one for LS.
    assert_eq!(rows, 2 * 9 + 1);
    let json: serde_json::Value = serde_json::from_str(&read(&out_dir.join("mini.json"))).unwrap();
    assert_eq!(json["records"].as_array().unwrap().len(), rows);
}

#[test]
fn all_zero_signals_are_a_numerical_failure() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("c.json");
    common::write_json(&path, &common::mini(8, 16, 2, 0.0, 2));
    let out = rowamp(&["simulate", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 3);
}

#[test]
fn analysis_subcommands_write_their_outputs() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("c.json");
    common::write_json(&path, &common::mini(16, 32, 2, 0.2, 1));
    let cfg = path.to_str().unwrap();
    let out_dir = dir.path().join("out");
    let out = out_dir.to_str().unwrap();

    let se = rowamp(&["se", "--config", cfg, "--out", out, "--mc-samples", "2000"]);
    assert_eq!(code(&se), 0, "{}", String::from_utf8_lossy(&se.stderr));
    let csv = read(&out_dir.join("mini.csv"));
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(5) == Some("se")));

    let rep = rowamp(&["replica", "--config", cfg, "--out", out, "--mc-samples", "2000"]);
    assert_eq!(code(&rep), 0, "{}", String::from_utf8_lossy(&rep.stderr));
    let csv = read(&out_dir.join("mini.csv"));
    assert_eq!(csv.lines().count(), 2);

    let mi = rowamp(&["mutual-info", "--config", cfg, "--out", out, "--mc-samples", "2000"]);
    assert_eq!(code(&mi), 0, "{}", String::from_utf8_lossy(&mi.stderr));
    let csv = read(&out_dir.join("mini_mi.csv"));
    assert_eq!(csv.lines().next(), Some(MI_CSV_HEADER));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn reproduce_fig5_emits_se_and_ep_tables() {
    let dir = tempdir().unwrap();
    let out = rowamp(&[
        "reproduce",
        "fig5",
        "--trials",
        "2",
        "--mc-samples",
        "4000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for (file, tag) in [("fig5_se.csv", "se"), ("fig5_ep.csv", "ep")] {
        let csv = read(&dir.path().join(file));
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let rows: Vec<&str> = lines.collect();
        // Three SNR values, 15 iterations each.
        assert_eq!(rows.len(), 45, "{file}");
        assert!(rows.iter().all(|r| r.split(',').nth(5) == Some(tag)));
    }
    assert!(dir.path().join("fig5.gp").exists());
}
