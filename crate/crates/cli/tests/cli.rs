use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ptd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptd"))
        .args(args)
        .output()
        .expect("ptd runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ptd-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn pipeline_matches_oracle() {
    let dir = tmp("pipeline");
    let (data, part, run, oracle) = (
        dir.join("d.csv"),
        dir.join("p.csv"),
        dir.join("run.json"),
        dir.join("o.json"),
    );
    let gen = ptd(&[
        "gen",
        "--dist",
        "zipf",
        "--n-objects",
        "400",
        "--lmax",
        "20",
        "--seed",
        "5",
        "--out",
        s(&data),
    ]);
    assert!(
        gen.status.success(),
        "{}",
        String::from_utf8_lossy(&gen.stderr)
    );
    assert!(ptd(&[
        "partition",
        "--data",
        s(&data),
        "--servers",
        "3",
        "--seed",
        "5",
        "--out",
        s(&part)
    ])
    .status
    .success());
    let q = ptd(&[
        "query",
        "--data",
        s(&data),
        "--partition",
        s(&part),
        "--levels",
        "objects,0,1",
        "--fanout",
        "8",
        "--k",
        "4",
        "--n-queries",
        "3",
        "--seed",
        "5",
        "--out",
        s(&run),
    ]);
    assert!(q.status.success(), "{}", String::from_utf8_lossy(&q.stderr));
    let run = json(&run);
    let results = run["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    for r in results {
        let query: Vec<String> = r["query"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.to_string())
            .collect();
        let o = ptd(&[
            "oracle",
            "--data",
            s(&data),
            "--k",
            "4",
            "--q",
            &query.join(","),
            "--out",
            s(&oracle),
        ]);
        assert!(o.status.success());
        let want: Vec<f64> = json(&oracle)["results"][0]["answers"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| a["score"].as_f64().unwrap())
            .collect();
        let got: Vec<f64> = r["answers"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| a["score"].as_f64().unwrap())
            .collect();
        assert_eq!(got.len(), want.len());
        assert!(
            got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= 1e-9),
            "{got:?} vs {want:?}"
        );
        assert!(r["metrics"]["comm_bytes"].as_u64().unwrap() > 0);
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn gen_is_deterministic() {
    let dir = tmp("gen");
    let (a, b, c) = (dir.join("a.csv"), dir.join("b.csv"), dir.join("c.csv"));
    for (out, seed) in [(&a, "9"), (&b, "9"), (&c, "10")] {
        assert!(
            ptd(&["gen", "--n-objects", "50", "--seed", seed, "--out", s(out)])
                .status
                .success()
        );
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tmp("usage");
    let out = dir.join("x.csv");
    let zero = ptd(&["gen", "--n-objects", "0", "--out", s(&out)]);
    assert_eq!(zero.status.code(), Some(2));
    assert!(!zero.stderr.is_empty());

    let missing = ptd(&[
        "query",
        "--data",
        s(&dir.join("nope.csv")),
        "--partition",
        s(&dir.join("nope2.csv")),
        "--levels",
        "objects",
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.csv"));

    let no_artifacts = ptd(&["select-levels"]);
    assert_eq!(no_artifacts.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_artifacts.stderr).contains("--auto"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn verify_exit_codes() {
    let dir = tmp("verify");
    let report = dir.join("v.json");
    let base = [
        "verify",
        "--configs",
        "6",
        "--max-objects",
        "150",
        "--sandwich-trials",
        "200",
    ];
    let ok = Command::new(env!("CARGO_BIN_EXE_ptd"))
        .args(base)
        .args(["--out", s(&report)])
        .output()
        .unwrap();
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    assert_eq!(json(&report)["passed"], true);
    let broken = Command::new(env!("CARGO_BIN_EXE_ptd"))
        .args(base)
        .arg("--break-lb")
        .output()
        .unwrap();
    assert_eq!(broken.status.code(), Some(1));
    let _ = std::fs::remove_dir_all(&dir);
}
