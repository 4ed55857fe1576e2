//! Needs the four MNIST IDX files in `data/mnist` at the repository root
//! (`scripts/fetch_mnist.sh`). Tests print a notice and return when absent.

use std::path::{Path, PathBuf};
use std::process::Command;

use fkal::data::{apply_imbalance, class_counts, load_mnist_split, InputShape};
use fkal::model::{load_checkpoint, ArchKind, ArchSpec, ModelParams};

fn mnist_dir() -> Option<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    if dir.join("train-images-idx3-ubyte").is_file() {
        Some(dir)
    } else {
        eprintln!("MNIST files not found under {}; skipping", dir.display());
        None
    }
}

#[test]
fn loader_reads_the_official_files() {
    let Some(dir) = mnist_dir() else { return };
    let split = load_mnist_split(&dir, 10_000, 2_000, 2_000).unwrap();
    assert_eq!(
        split.shape,
        InputShape::Image {
            channels: 1,
            height: 28,
            width: 28
        }
    );
    assert_eq!(
        (split.train.len(), split.validation.len(), split.test.len()),
        (10_000, 2_000, 2_000)
    );
    assert_eq!(split.train.ablation_label(0), Some(5));
    let sum: f64 = split.train.input(0).iter().sum();
    assert!((sum - 27525.0 / 255.0).abs() < 1e-9, "{sum}");
    assert_eq!(split.test[0].label, Some(7));
    let sum: f64 = split.test[0].input.iter().sum();
    assert!((sum - 18454.0 / 255.0).abs() < 1e-9);
    assert!(split.train.input(0).iter().all(|v| (0.0..=1.0).contains(v)));

    let biased = apply_imbalance(&split, 100.0, &[5, 6, 7, 8, 9], 1).unwrap();
    let labels: Vec<Option<usize>> = (0..biased.train.len())
        .map(|i| biased.train.ablation_label(i))
        .collect();
    let full: Vec<Option<usize>> = (0..split.train.len()).map(|i| split.train.ablation_label(i)).collect();
    let (after, before) = (class_counts(&labels, 10), class_counts(&full, 10));
    for c in 0..10 {
        let want = if c >= 5 { (before[c] / 100).max(1) } else { before[c] };
        assert_eq!(after[c], want, "class {c}");
    }
}

#[test]
fn pretrain_command_writes_a_loadable_checkpoint() {
    let Some(dir) = mnist_dir() else { return };
    let tmp = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "dataset": {"kind": "mnist", "dir": dir, "train": 600, "validation": 200, "test": 100},
        "arch": {"kind": "small_cnn"},
        "pretrain": {"images": 300, "train": {"epochs": 2}},
        "methods": [{"method": {"kind": "random"}}],
        "iterations": 1, "pool_size": 10, "seeds": [3]
    });
    let path = tmp.path().join("c.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let ckpt = tmp.path().join("ckpt");
    let out = Command::new(env!("CARGO_BIN_EXE_fkal"))
        .args([
            "pretrain",
            "--config",
            path.to_str().unwrap(),
            "--out",
            ckpt.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("rotation accuracy"));
    let p: ModelParams<f32> = load_checkpoint(&ckpt).unwrap();
    assert_eq!(p.arch().kind, ArchKind::SmallCnn);
    assert_eq!(
        p.arch(),
        &ArchSpec::small_cnn(1, 28, 28, 10).with_dropout(p.arch().dropout_rate)
    );

    // A run that loads the checkpoint instead of pretraining.
    let mut cfg = cfg;
    cfg["pretrain"]["checkpoint"] = serde_json::json!(ckpt);
    cfg["output_dir"] = serde_json::json!(tmp.path().join("run"));
    cfg["train"] = serde_json::json!({"epochs": 2});
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fkal"))
        .args(["run", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let pre = std::fs::read_to_string(tmp.path().join("run/pretrain.csv")).unwrap();
    assert_eq!(pre.lines().nth(1), Some("3,0,"));
}
