use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sks(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sks"))
        .args(args)
        .output()
        .unwrap()
}

fn specs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs")
}

const SMALL: &str = r#"
kind = "performance"
seed = 5
output_dir = "out"

[graph]
source = "synthetic"
users = 150
edges = 450

[mapping]
users_per_peer = [10, 20]

[[workloads]]
kind = "neighborhood"
count = 15

[[workloads]]
kind = "social-strength"
count = 5
"#;

#[test]
fn shipped_specs_validate() {
    for name in ["performance", "timeout-tradeoff", "influence", "collusion"] {
        let path = specs_dir().join(format!("{name}.toml"));
        let out = sks(&["validate", path.to_str().unwrap()]);
        assert!(
            out.status.success(),
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn validate_reports_range_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(
        &path,
        SMALL.replace("count = 15", "count = 15\nmin_weight = 1.5"),
    )
    .unwrap();
    let out = sks(&["validate", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("min_weight 1.5 outside [0, 1]"));
}

#[test]
fn missing_spec_fails_with_diagnostic() {
    let out = sks(&["run", "/nonexistent/spec.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn run_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("small.toml");
    fs::write(&spec, SMALL).unwrap();
    let runs = [("a", "5"), ("b", "5"), ("c", "6")];
    for (out, seed) in runs {
        let o = sks(&[
            "run",
            spec.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            dir.path().join(out).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    for f in [
        "requests.csv",
        "peers.csv",
        "summary.csv",
        "completion_cdf.csv",
        "totals.csv",
        "summary.txt",
    ] {
        assert_eq!(read("a", f), read("b", f), "{f}");
    }
    assert_ne!(read("a", "requests.csv"), read("c", "requests.csv"));
}

#[test]
fn oracle_answers_each_request() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.txt");
    fs::write(&graph, "1 2 friend 0.8\n2 3 friend 0.6\n1 4 work 0.3\n").unwrap();
    let reqs = dir.path().join("r.jsonl");
    fs::write(
        &reqs,
        concat!(
            r#"{"request_id": 1, "kind": "relation_test", "ego": "1", "alter": "2", "label": "friend", "min_weight": 0.5}"#,
            "\n",
            r#"{"request_id": 2, "kind": "neighborhood", "ego": "1", "radius": 2}"#,
            "\n",
            r#"{"request_id": 3, "kind": "social_strength", "ego": "1", "alter": "3"}"#,
            "\n",
            r#"{"request_id": 4, "kind": "social_strength", "ego": "9", "alter": "3"}"#,
            "\n"
        ),
    )
    .unwrap();
    let out = sks(&["oracle", graph.to_str().unwrap(), reqs.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["answer"], true);
    let users: Vec<&str> = lines[1]["answer"]
        .as_array()
        .unwrap()
        .iter()
        .map(|u| u["uid"].as_str().unwrap())
        .collect();
    assert_eq!(users.len(), 3);
    // One 2-hop path: nw(1,2) = 1, nw(2,3) = 1, so 1 - (1 - 1/2).
    assert!((lines[2]["answer"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!(lines[3].get("error").is_some());
}
