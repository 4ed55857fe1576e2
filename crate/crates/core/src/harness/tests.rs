use std::fs;

use proptest::prelude::*;

use super::*;
use crate::data::SyntheticSpec;
use crate::model::{ArchKind, TrainHyper};
use crate::pseudo::PseudoMethod;
use crate::selection::{AcquisitionMethod, UncertaintyMetric};

fn tiny(
    out: &std::path::Path,
    methods: Vec<AcquisitionMethod>,
    iterations: usize,
    seeds: Vec<u64>,
) -> ExperimentConfig {
    ExperimentConfig {
        name: "tiny".into(),
        dataset: DatasetSpec::Synthetic(SyntheticSpec {
            num_classes: 3,
            dim: 5,
            per_class: 40,
            separation: 3.0,
            split: [0.7, 0.15, 0.15],
        }),
        imbalance: Some(ImbalanceSpec {
            ratio: 2.0,
            classes: vec![2],
        }),
        arch: ArchConfig {
            kind: ArchKind::Mlp,
            dropout_rate: 0.25,
        },
        train: TrainHyper {
            epochs: 5,
            batch_size: 5,
            ..TrainHyper::default()
        },
        pretrain: None,
        methods: methods
            .into_iter()
            .map(|method| MethodConfig {
                label: None,
                method,
                init: None,
                iterations: None,
            })
            .collect(),
        iterations,
        pool_size: 4,
        seeds,
        output_dir: out.to_path_buf(),
        precision: Precision::F64,
        jobs: 2,
        rare_classes: None,
        record_wall_time: false,
    }
}

fn all_methods() -> Vec<AcquisitionMethod> {
    vec![
        AcquisitionMethod::Random,
        AcquisitionMethod::Uncertainty {
            metric: UncertaintyMetric::VarR,
            k: 3,
            e: 2,
        },
        AcquisitionMethod::Pcc,
        AcquisitionMethod::Pfk {
            pseudo: PseudoMethod::TrustedMatch,
        },
        AcquisitionMethod::Pfk {
            pseudo: PseudoMethod::Oracle,
        },
    ]
}

#[test]
fn config_rejects_bad_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let ok = tiny(dir.path(), vec![AcquisitionMethod::Random], 2, vec![1]);
    assert!(ok.validate().is_ok());
    let mut c = ok.clone();
    c.iterations = 0;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.pool_size = 0;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.seeds.clear();
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.methods.push(c.methods[0].clone());
    assert!(c.validate().is_err(), "duplicate labels");
    let mut c = ok.clone();
    c.methods[0].init = Some(InitChoice::Pretrained);
    assert!(c.validate().is_err(), "pretrained init without pretraining");

    // 3 classes x 40 x 0.7 = 84 train, class 2 halved to 14 -> 70.
    let mut c = ok.clone();
    c.iterations = 18;
    let base = c.base_split(1).unwrap();
    assert!(matches!(c.split_for(&base, 1), Err(crate::Error::Config(_))));
    c.iterations = 17;
    assert_eq!(c.split_for(&base, 1).unwrap().train.len(), 70);
}

#[test]
fn config_json_round_trip_and_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(std::path::Path::new("out"), all_methods(), 2, vec![3, 4]);
    let path = dir.path().join("c.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let back = ExperimentConfig::load(&path).unwrap();
    assert_eq!(back.output_dir, dir.path().join("out"));
    assert_eq!(back.methods, cfg.methods);
    assert_eq!(back.methods[1].label(), "varR");
    assert_eq!(back.methods[3].label(), "pfk_trusted_match");

    fs::write(&path, r#"{"dataset": {"kind": "nope"}}"#).unwrap();
    assert!(matches!(ExperimentConfig::load(&path), Err(crate::Error::Config(_))));
}

#[test]
fn single_iteration_gives_one_row_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), vec![AcquisitionMethod::Random], 1, vec![1, 2, 3]);
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.rows.len(), 3);
    assert!(out.aborted.is_empty());
    let seeds: Vec<u64> = out.rows.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![1, 2, 3]);
    for f in [
        REPORT_FILE,
        SUMMARY_FILE,
        PER_CLASS_FILE,
        SELECTIONS_FILE,
        ABORTED_FILE,
        CONFIG_FILE,
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert!(dir.path().join(CONFUSION_DIR).join("random_seed2.csv").is_file());
}

#[test]
fn rows_obey_bookkeeping_and_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), all_methods(), 3, vec![5]);
    let out = run_experiment(&cfg).unwrap();
    assert!(out.aborted.is_empty(), "{:?}", out.aborted);
    assert_eq!(out.rows.len(), 5 * 3);
    for r in &out.rows {
        assert_eq!(r.labeled_count, r.iteration * cfg.pool_size);
        assert!(r.rare_class_acc.is_some());
        assert_eq!(r.wall_ms, None);
    }
    for (line, row) in out.selections.iter().zip(&out.rows) {
        assert_eq!(
            (line.method.as_str(), line.record.iteration),
            (row.method.as_str(), row.iteration)
        );
        assert_eq!(line.record.acquisition.forward, row.al_forward);
        let m = &cfg.methods.iter().find(|m| m.label() == row.method).unwrap().method;
        assert_eq!(m.expected_passes(&line.record, 3), line.record.acquisition);
        let n = (row.labeled_count * cfg.train.epochs * m.ensemble_size()) as u64;
        assert_eq!(line.training.forward, n);
        assert_eq!(line.training.backward, n);
    }
    // Each label is revealed once: selections are disjoint within an arm.
    for m in cfg.methods.iter().map(|m| m.label()) {
        let mut all: Vec<usize> = out
            .selections
            .iter()
            .filter(|l| l.method == m)
            .flat_map(|l| l.record.selected.clone())
            .collect();
        let total = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), total);
        assert_eq!(total, 3 * cfg.pool_size);
    }
    let pcc = out.selections.iter().find(|l| l.method == "pcc").unwrap();
    assert!(pcc.record.pseudo_labels.is_none());
    let pfk = out.selections.iter().find(|l| l.method == "pfk_oracle").unwrap();
    assert_eq!(pfk.record.pseudo_labels.as_ref().map(Vec::len), Some(cfg.pool_size));
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = tiny(a.path(), all_methods(), 2, vec![7, 8]);
    run_experiment(&cfg).unwrap();
    cfg.output_dir = b.path().to_path_buf();
    cfg.jobs = 1;
    run_experiment(&cfg).unwrap();
    for f in [REPORT_FILE, SUMMARY_FILE, PER_CLASS_FILE, SELECTIONS_FILE] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn diverging_arms_are_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(
        dir.path(),
        vec![AcquisitionMethod::Random, AcquisitionMethod::Pcc],
        2,
        vec![1],
    );
    cfg.train.learning_rate = 1e300;
    let out = run_experiment(&cfg).unwrap();
    assert!(out.rows.is_empty());
    assert_eq!(out.aborted.len(), 2);
    assert!(out.aborted.iter().all(|a| a.iteration == 1));
    let text = fs::read_to_string(dir.path().join(ABORTED_FILE)).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn float_precision_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(
        dir.path(),
        vec![AcquisitionMethod::Pfk {
            pseudo: PseudoMethod::Argmax,
        }],
        2,
        vec![1],
    );
    cfg.precision = Precision::F32;
    let out = run_experiment(&cfg).unwrap();
    assert!(out.aborted.is_empty(), "{:?}", out.aborted);
    assert_eq!(out.rows.len(), 2);
}

fn row(method: &str, seed: u64, iteration: usize, acc: f64) -> ReportRow {
    ReportRow {
        method: method.into(),
        seed,
        iteration,
        labeled_count: iteration * 10,
        test_acc: acc,
        mean_class_acc: acc,
        rare_class_acc: None,
        al_forward: 0,
        al_backward: 0,
        wall_ms: None,
    }
}

#[test]
fn aggregate_examples() {
    let s = aggregate(&[row("a", 1, 1, 0.7)]).unwrap();
    assert_eq!(s[0].test_acc_std, 0.0);
    assert_eq!(s[0].test_acc_mean, 0.7);
    let s = aggregate(&[row("a", 1, 1, 0.4), row("a", 2, 1, 0.6)]).unwrap();
    assert!((s[0].test_acc_mean - 0.5).abs() < 1e-12);
    assert!((s[0].test_acc_std - 0.1414213562373095).abs() < 1e-12);
    assert_eq!(s[0].seeds, 2);
    assert_eq!(s[0].rare_class_acc_mean, None);
}

#[test]
fn aggregate_rejects_grid_mismatch_and_duplicates() {
    let rows = vec![row("a", 1, 1, 0.4), row("a", 1, 2, 0.5), row("a", 2, 1, 0.6)];
    assert!(matches!(aggregate(&rows), Err(crate::Error::Config(m)) if m.contains("grid")));
    let rows = vec![row("a", 1, 1, 0.4), row("a", 1, 1, 0.5)];
    assert!(matches!(aggregate(&rows), Err(crate::Error::Config(m)) if m.contains("duplicate")));
    assert!(aggregate(&[]).is_err());
}

#[test]
fn aggregate_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..3u64 {
        let sub = dir.path().join(format!("run{seed}"));
        let mut cfg = tiny(&sub, vec![AcquisitionMethod::Random], 2, vec![seed]);
        cfg.record_wall_time = true;
        run_experiment(&cfg).unwrap();
    }
    let pattern = format!("{}/run*/{}", dir.path().display(), REPORT_FILE);
    let out = dir.path().join("all.csv");
    let s = aggregate_files(&pattern, &out).unwrap();
    assert_eq!(s.len(), 2);
    assert!(s.iter().all(|r| r.seeds == 3));
    assert!(out.is_file());
    assert!(aggregate_files(&format!("{}/none*.csv", dir.path().display()), &out).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    // Recomputes mean and std with the two-pass textbook formula.
    #[test]
    fn aggregate_matches_recomputation(accs in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..6)) {
        let mut rows = Vec::new();
        for (seed, per_iter) in accs.iter().enumerate() {
            for (it, &a) in per_iter.iter().enumerate() {
                rows.push(row("m", seed as u64, it + 1, a));
            }
        }
        let s = aggregate(&rows).unwrap();
        prop_assert_eq!(s.len(), 3);
        for (it, r) in s.iter().enumerate() {
            let xs: Vec<f64> = accs.iter().map(|v| v[it]).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let sq: f64 = xs.iter().map(|x| x * x).sum();
            let std = if xs.len() > 1 { ((sq - n * mean * mean) / (n - 1.0)).max(0.0).sqrt() } else { 0.0 };
            prop_assert!((r.test_acc_mean - mean).abs() < 1e-12);
            prop_assert!((r.test_acc_std - std).abs() < 1e-6);
        }
    }
}
