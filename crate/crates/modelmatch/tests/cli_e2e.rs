//! End-to-end checks through the command-line binary: exit codes, file
//! formats, and determinism of a full run.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_modelmatch"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary should launch")
}

fn assert_code(out: &Output, want: i32) {
    let got = out.status.code().expect("no exit code");
    assert_eq!(
        got,
        want,
        "exit code {got}, expected {want}; stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn synth_then_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "synth",
            "--seed",
            "9",
            "--out",
            "study",
            "--n-genes",
            "60",
            "--cells-per-condition",
            "8",
        ],
        dir.path(),
    );
    assert_code(&out, 0);
    assert!(dir.path().join("study/run.toml").exists());
    assert!(dir.path().join("study/target.csv").exists());

    for name in ["a", "b"] {
        let out = run(
            &["run", "--config", "study/run.toml", "--out", name, "--k", "1"],
            dir.path(),
        );
        assert_code(&out, 0);
    }
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert!(names.contains(&"ranking.csv".to_string()));
    assert!(names.contains(&"corruption_sweep.csv".to_string()));
    assert!(names.contains(&"medoids.json".to_string()));
    assert!(names.contains(&"summary.json".to_string()));
    for name in &names {
        let a = std::fs::read_to_string(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read_to_string(dir.path().join("b").join(name)).unwrap();
        if name == "summary.json" {
            let strip = |s: &str| {
                let mut v: serde_json::Value = serde_json::from_str(s).unwrap();
                v.as_object_mut().unwrap().remove("timestamp");
                v.to_string()
            };
            assert_eq!(strip(&a), strip(&b), "summary differs beyond timestamp");
        } else {
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }
}

#[test]
fn rank_with_metric_override() {
    let dir = tempfile::tempdir().unwrap();
    assert_code(&run(&["synth", "--seed", "3", "--out", "s"], dir.path()), 0);
    let out = run(
        &[
            "rank",
            "--config",
            "s/run.toml",
            "--metric",
            "emdxzscore",
            "--max-cells",
            "50",
            "--out",
            "r",
        ],
        dir.path(),
    );
    assert_code(&out, 0);
    let ranking = std::fs::read_to_string(dir.path().join("r/ranking.csv")).unwrap();
    assert!(ranking.starts_with("rank,condition_id,distance"));
    assert_eq!(ranking.lines().count(), 7, "six queries plus header");
}

#[test]
fn ingest_converts_sparse_to_dense() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.txt"), "2 3 3\n1 1 4\n1 3 2\n2 2 5\n").unwrap();
    std::fs::write(dir.path().join("m.txt.genes"), "ga\ngb\ngc\n").unwrap();
    std::fs::write(dir.path().join("m.txt.cells"), "c1,x\nc2,x\n").unwrap();
    let out = run(
        &[
            "ingest",
            "--input",
            "m.txt",
            "--format",
            "sparse-triplet",
            "--out",
            "dense.csv",
        ],
        dir.path(),
    );
    assert_code(&out, 0);
    let dense = std::fs::read_to_string(dir.path().join("dense.csv")).unwrap();
    assert_eq!(dense, "cell_id,ga,gb,gc\nc1,4,0,2\nc2,0,5,0\n");
}

#[test]
fn usage_error_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // unknown metric variant is an argument error
    assert_code(
        &run(&["rank", "--config", "x.toml", "--metric", "cosine"], dir.path()),
        1,
    );
    assert_code(&run(&["frobnicate"], dir.path()), 1);
}

#[test]
fn missing_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["rank", "--config", "absent.toml"], dir.path());
    assert_code(&out, 2);
    assert!(!out.stderr.is_empty(), "error should be reported on stderr");
}

#[test]
fn malformed_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "cell_id,g1\nc1,notanumber\n").unwrap();
    std::fs::write(
        dir.path().join("cfg.toml"),
        "version = 1\nseed = 0\n\n[data.target]\nid = \"t\"\npath = \"bad.csv\"\n\n\
         [[data.queries]]\nid = \"q\"\npath = \"bad.csv\"\n",
    )
    .unwrap();
    assert_code(&run(&["rank", "--config", "cfg.toml"], dir.path()), 2);
}

#[test]
fn degenerate_separation_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    // all queries identical to the target: zero separation, scoring fails
    let csv = "cell_id,g1,g2\nc1,5,1\nc2,5,1\n";
    std::fs::write(dir.path().join("t.csv"), csv).unwrap();
    std::fs::write(dir.path().join("q.csv"), csv).unwrap();
    std::fs::write(
        dir.path().join("cfg.toml"),
        "version = 1\nseed = 0\n\n[qc]\nmin_nonzero_genes = 1\n\n[data.target]\nid = \"t\"\npath = \"t.csv\"\n\n\
         [[data.queries]]\nid = \"q1\"\npath = \"q.csv\"\n\n[[data.queries]]\nid = \"q2\"\npath = \"q.csv\"\n",
    )
    .unwrap();
    assert_code(
        &run(&["evaluate-metrics", "--config", "cfg.toml"], dir.path()),
        3,
    );
}
