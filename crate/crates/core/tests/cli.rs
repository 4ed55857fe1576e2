use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fkal::data::write_matrix;
use ndarray::Array2;

fn fkal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fkal")).args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn usage_errors_exit_one() {
    let out = fkal(&["run"]);
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(err.contains("--config") && err.contains("Usage"), "{err}");

    let out = fkal(&["select", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("--bogus"));

    assert_eq!(fkal(&[]).status.code(), Some(1));
    assert_eq!(fkal(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    for sub in ["run", "select", "pretrain", "report"] {
        let out = fkal(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(text(&out.stdout).contains("Usage"), "{sub}");
    }
    assert_eq!(fkal(&["--help"]).status.code(), Some(0));
}

/// Four unit-ish columns in R^6 and matrices built from them.
fn columns(dir: &Path) -> [PathBuf; 4] {
    let train = Array2::from_shape_fn((6, 5), |(r, c)| {
        ((r * 7 + c * 13) % 11) as f32 + (r == c) as u8 as f32 * 5.0
    });
    // Validation column j copies train column 3 - 2j, so column 0 copies
    // train 3 and column 1 copies train 1.
    let val = Array2::from_shape_fn((6, 2), |(r, c)| train[[r, 3 - 2 * c]]);
    let g_train = Array2::from_shape_fn((6, 5), |(r, c)| ((r + 2 * c) % 5) as f32 - 2.0);
    let g_val = Array2::from_shape_fn((6, 2), |(r, c)| g_train[[r, 3 - 2 * c]]);
    let paths = ["vz.fmat", "vg.fmat", "tz.fmat", "tg.fmat"].map(|f| dir.join(f));
    write_matrix(&paths[0], &val).unwrap();
    write_matrix(&paths[1], &g_val).unwrap();
    write_matrix(&paths[2], &train).unwrap();
    write_matrix(&paths[3], &g_train).unwrap();
    paths
}

fn select(paths: &[PathBuf; 4], pool: &str, method: &str) -> Output {
    let p: Vec<&str> = paths.iter().map(|p| p.to_str().unwrap()).collect();
    fkal(&[
        "select",
        "--val-z",
        p[0],
        "--val-g",
        p[1],
        "--train-z",
        p[2],
        "--train-g",
        p[3],
        "--pool",
        pool,
        "--method",
        method,
    ])
}

#[test]
fn select_matches_copied_columns() {
    let dir = tempfile::tempdir().unwrap();
    let paths = columns(dir.path());
    for method in ["pcc", "pfk"] {
        let out = select(&paths, "2", method);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
        let mut picks: Vec<usize> = text(&out.stdout).lines().map(|l| l.parse().unwrap()).collect();
        picks.sort_unstable();
        assert_eq!(picks, vec![1, 3], "{method}");
    }
    // More picks than centers: every train column is returned once.
    let out = select(&paths, "5", "pfk");
    let mut picks: Vec<usize> = text(&out.stdout).lines().map(|l| l.parse().unwrap()).collect();
    picks.sort_unstable();
    assert_eq!(picks, vec![0, 1, 2, 3, 4]);
}

#[test]
fn select_with_pool_beyond_columns_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let paths = columns(dir.path());
    let out = select(&paths, "6", "pcc");
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("error:"));
    let missing = fkal(&[
        "select",
        "--val-z",
        "nope.fmat",
        "--train-z",
        "nope.fmat",
        "--pool",
        "1",
    ]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn smoke_run_writes_documented_files_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("smoke");
    let config = repo().join("configs/smoke.json");
    let out = fkal(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--jobs",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    for f in [
        "report.csv",
        "summary.csv",
        "per_class.csv",
        "selections.jsonl",
        "aborted.csv",
        "pretrain.csv",
        "config.json",
        "confusion/pfk_trusted_match_seed1.csv",
    ] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let report = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(
        report.lines().next().unwrap(),
        "method,seed,iteration,labeled_count,test_acc,mean_class_acc,rare_class_acc,al_forward,al_backward,wall_ms"
    );
    // 8 methods x 2 seeds x 3 iterations.
    assert_eq!(report.lines().count(), 1 + 48);
    let confusion = std::fs::read_to_string(out_dir.join("confusion/random_seed2.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 4);
    assert!(confusion.lines().all(|l| l.split(',').count() == 4));

    let summary = dir.path().join("summary.csv");
    let pattern = format!("{}/*/report.csv", dir.path().display());
    let out = fkal(&["report", "--glob", &pattern, "--out", summary.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let s = std::fs::read_to_string(summary).unwrap();
    assert_eq!(s.lines().count(), 1 + 8 * 3);
    assert!(s.starts_with("method,iteration,seeds,"));

    let out = fkal(&["report", "--glob", "/nonexistent/*.csv", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pretrain_on_vectors_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(repo().join("configs/smoke.json")).unwrap()).unwrap();
    let mut cfg = cfg;
    cfg["pretrain"] = serde_json::json!({"images": 10, "train": {"epochs": 1}});
    let path = dir.path().join("c.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = fkal(&[
        "pretrain",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("ck").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("image"), "{}", text(&out.stderr));
}
