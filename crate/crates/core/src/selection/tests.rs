use approx::assert_abs_diff_eq;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::data::{make_synthetic, Sample};
use crate::features::{standardize, FeatureSet};
use crate::kernels::KernelKind;
use crate::model::{init_params, train, ArchSpec, InitMode, TrainHyper};
use crate::pseudo::Perturbation;

fn kernel(values: Array2<f64>) -> KernelMatrix {
    let (r, c) = values.dim();
    KernelMatrix::new(values, (0..r).collect(), (100..100 + c).collect(), KernelKind::Pfk).unwrap()
}

fn random_set(n: usize, l: usize, r: &mut impl Rng) -> FeatureSet {
    let mut m = Array2::zeros((l, n));
    for mut col in m.columns_mut() {
        let mut v: Vec<f64> = (0..l).map(|_| r.sample(StandardNormal)).collect();
        standardize(&mut v);
        col.assign(&Array1::from(v));
    }
    FeatureSet::new(vec!["s".into()], vec![m], (0..n).collect()).unwrap()
}

#[test]
fn select_pool_single_row_ranks_columns() {
    let k = kernel(Array2::from_shape_vec((1, 5), vec![0.1, 0.9, 0.5, 0.9, -1.0]).unwrap());
    assert_eq!(select_pool(&k, 4).unwrap(), vec![101, 103, 102, 100]);
    let mut all = select_pool(&k, 5).unwrap();
    all.sort();
    assert_eq!(all, vec![100, 101, 102, 103, 104]);
    assert!(select_pool(&k, 6).is_err());
    assert!(select_pool(&kernel(Array2::zeros((0, 3))), 1).is_err());
}

/// Literal simulation: list every (row, col) candidate each step and sort.
fn simulate(values: &Array2<f64>, p: usize) -> Vec<usize> {
    let (rows, cols) = values.dim();
    let mut taken_cols = Vec::new();
    let mut served: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for _ in 0..p {
        if served.len() == rows {
            served.clear();
        }
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for r in 0..rows {
            if served.contains(&r) {
                continue;
            }
            for c in 0..cols {
                if !taken_cols.contains(&c) {
                    cands.push((values[[r, c]], r, c));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let (_, r, c) = cands[0];
        served.push(r);
        taken_cols.push(c);
        out.push(100 + c);
    }
    out
}

#[test]
fn select_pool_matches_simulation() {
    let mut r = crate::rng::rng(1);
    for _ in 0..50 {
        let v = Array2::from_shape_fn((3, 6), |_| (r.random::<f64>() * 4.0).round() / 4.0);
        for p in 1..=6 {
            assert_eq!(select_pool(&kernel(v.clone()), p).unwrap(), simulate(&v, p));
        }
    }
}

proptest! {
    #[test]
    fn select_pool_depends_only_on_order(seed in any::<u64>(), p in 1usize..8) {
        let mut r = crate::rng::rng(seed);
        let v = Array2::from_shape_fn((3, 8), |_| r.random::<f64>() * 2.0 - 1.0);
        let a = select_pool(&kernel(v.clone()), p).unwrap();
        let b = select_pool(&kernel(v.mapv(|x| (3.0 * x).exp() + 7.0)), p).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn k_center_examples() {
    let mut r = crate::rng::rng(2);
    let s = random_set(6, 5, &mut r);
    let mut all = k_center_greedy(&s, 6).unwrap();
    let (_, dist) = descriptor_distances(&s).unwrap();
    assert_eq!(covering_radius(&dist, &all), 0.0);
    all.sort();
    assert_eq!(all, (0..6).collect::<Vec<_>>());
    let one = random_set(1, 5, &mut r);
    let dup = one.select(&[0, 0, 0, 0]).unwrap();
    let c = k_center_greedy(&dup, 1).unwrap();
    let (_, dd) = descriptor_distances(&dup).unwrap();
    assert_eq!(c.len(), 1);
    assert_abs_diff_eq!(covering_radius(&dd, &c), 0.0, epsilon = 1e-7);
    assert!(k_center_greedy(&s, 0).is_err());
    assert!(k_center_greedy(&s, 7).is_err());
}

fn brute_force_radius(dist: &Array2<f64>, k: usize) -> f64 {
    let n = dist.nrows();
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        best = best.min(covering_radius(dist, &idx));
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return best;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[test]
fn k_center_is_within_twice_optimal_and_radius_shrinks_with_k() {
    let mut r = crate::rng::rng(3);
    for _ in 0..30 {
        let n = r.random_range(3..=12);
        let s = random_set(n, 6, &mut r);
        let (_, dist) = descriptor_distances(&s).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..=3.min(n) {
            let c = k_center_greedy(&s, k).unwrap();
            let radius = covering_radius(&dist, &c);
            assert!(radius <= 2.0 * brute_force_radius(&dist, k) + 1e-12);
            assert!(radius <= prev + 1e-12);
            prev = radius;
        }
    }
}

#[test]
fn uncertainty_examples() {
    let agree = Array2::from_shape_vec((3, 2), vec![0.9, 0.1, 0.8, 0.2, 0.7, 0.3]).unwrap();
    assert_eq!(uncertainty_score(&agree, UncertaintyMetric::VarR).unwrap(), 0.0);
    let same = Array2::from_shape_vec((2, 2), vec![0.9, 0.1, 0.9, 0.1]).unwrap();
    assert_abs_diff_eq!(
        uncertainty_score(&same, UncertaintyMetric::Bald).unwrap(),
        0.0,
        epsilon = 1e-15
    );
    let split = Array2::from_shape_vec((2, 2), vec![0.9, 0.1, 0.2, 0.8]).unwrap();
    assert_eq!(uncertainty_score(&split, UncertaintyMetric::VarR).unwrap(), 0.5);
    assert!(uncertainty_score(&same.slice(ndarray::s![..1, ..]).to_owned(), UncertaintyMetric::VarR).is_err());

    let mut r = crate::rng::rng(4);
    for _ in 0..10 {
        let mut m = Array2::from_shape_fn((5, 3), |_| r.random::<f64>() + 0.01);
        for mut row in m.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let h = |p: &[f64]| -> f64 { p.iter().map(|v| -v * v.ln()).sum() };
        let mean: Vec<f64> = (0..3).map(|c| (0..5).map(|k| m[[k, c]]).sum::<f64>() / 5.0).collect();
        let expected_h: f64 = (0..5).map(|k| h(&m.row(k).to_vec())).sum::<f64>() / 5.0;
        assert_abs_diff_eq!(
            uncertainty_score(&m, UncertaintyMetric::Entropy).unwrap(),
            h(&mean),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            uncertainty_score(&m, UncertaintyMetric::Bald).unwrap(),
            h(&mean) - expected_h,
            epsilon = 1e-12
        );
    }
}

#[test]
fn top_p_prefers_lowest_on_ties() {
    assert_eq!(top_p(&[0.5, 0.9, 0.5, 0.9], 3), vec![1, 3, 0]);
}

#[test]
fn random_baseline_examples() {
    let pool: Vec<usize> = (10..20).collect();
    let mut all = baseline_random(&pool, 10, 1).unwrap();
    all.sort();
    assert_eq!(all, pool);
    assert_eq!(
        baseline_random(&pool, 4, 7).unwrap(),
        baseline_random(&pool, 4, 7).unwrap()
    );
    assert!(baseline_random(&pool, 11, 7).is_err());
}

#[test]
fn random_baseline_is_uniform() {
    let pool: Vec<usize> = (0..10).collect();
    let mut counts = [0usize; 10];
    let draws = 10_000;
    for seed in 0..draws {
        for i in baseline_random(&pool, 3, seed).unwrap() {
            counts[i] += 1;
        }
    }
    let p = 0.3;
    let mean = draws as f64 * p;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - mean).abs() < 3.0 * sd, "{counts:?}");
    }
}

#[test]
fn misclassified_subset_examples() {
    let mut p = init_params::<f64>(&ArchSpec::mlp(2, 3), 0, InitMode::Random).unwrap();
    p.layers[2].bias[1] = 100.0;
    let val: Vec<Sample> = (0..9)
        .map(|i| Sample::labeled(vec![i as f64 * 0.1, 0.5], i % 3))
        .collect();
    assert_eq!(
        misclassified_subset(&p, &val, Tally::none()).unwrap(),
        vec![0, 2, 3, 5, 6, 8]
    );

    let q = init_params::<f64>(&ArchSpec::mlp(2, 3), 1, InitMode::Random).unwrap();
    let mut r = crate::rng::rng(5);
    let val: Vec<Sample> = (0..20)
        .map(|_| Sample::labeled(vec![r.random(), r.random()], r.random_range(0..3)))
        .collect();
    let probs = crate::model::predict(
        &q,
        &val.iter().map(|s| s.input.as_slice()).collect::<Vec<_>>(),
        Tally::none(),
    )
    .unwrap();
    let expect: Vec<usize> = (0..20)
        .filter(|&i| argmax(probs.row(i).iter().copied()) != val[i].label.unwrap())
        .collect();
    assert_eq!(misclassified_subset(&q, &val, Tally::none()).unwrap(), expect);
    // Perfect predictions leave nothing.
    let perfect: Vec<Sample> = (0..5).map(|i| Sample::labeled(vec![i as f64, 0.0], 1)).collect();
    assert!(misclassified_subset(&p, &perfect, Tally::none()).unwrap().is_empty());
}

#[test]
fn pool_state_rejects_duplicates() {
    let mut s = PoolState::new(5, 2, 2).unwrap();
    s.add(&[3, 1]).unwrap();
    assert_eq!(s.labeled(), vec![1, 3]);
    assert_eq!(s.unlabeled(), vec![0, 2, 4]);
    assert!(matches!(s.add(&[1]), Err(Error::AlreadyRevealed(1))));
    assert!(matches!(s.add(&[0, 0]), Err(Error::AlreadyRevealed(0))));
    assert!(s.add(&[7]).is_err());
    assert_eq!(s.iteration(), 1);
}

fn setup() -> (DatasetSplit, ModelParams<f64>) {
    let split = make_synthetic(3, 6, 40, 1.0, 11).unwrap();
    let p = init_params::<f64>(&ArchSpec::mlp(6, 3), 2, InitMode::Random).unwrap();
    (split, p)
}

fn methods() -> Vec<AcquisitionMethod> {
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
            pseudo: PseudoMethod::Argmax,
        },
        AcquisitionMethod::Pfk {
            pseudo: PseudoMethod::Oracle,
        },
        AcquisitionMethod::PfkMc {
            metric: PseudoMethod::McMi,
            sampler: SamplerSpec {
                k: 4,
                perturbation: Perturbation::GaussianNoise { sigma: 0.1 },
                seed: 0,
            },
            ridge: DEFAULT_RIDGE,
        },
    ]
}

#[test]
fn acquisition_passes_follow_the_cost_table() {
    let (split, p) = setup();
    let second = init_params::<f64>(&ArchSpec::mlp(6, 3), 3, InitMode::Random).unwrap();
    let models = vec![p, second];
    for method in methods() {
        let counter = PassCounter::new();
        let mut state = PoolState::new(split.train.len(), 5, 3).unwrap();
        let mut oracle = Oracle::new();
        for it in 0..3u64 {
            let ctx = AcquisitionContext {
                models: &models,
                split: &split,
                seed: it,
                counter: &counter,
            };
            let rec = acquire(&mut state, &mut oracle, &method, &ctx).unwrap();
            assert_eq!(rec.acquisition, method.expected_passes(&rec, 3), "{}", method.label());
            assert_eq!(rec.selected.len(), 5);
            assert!(!rec.fallback);
            if matches!(
                method,
                AcquisitionMethod::Random | AcquisitionMethod::Uncertainty { .. }
            ) {
                assert_eq!(rec.screening, Passes::default());
            } else {
                assert_eq!(rec.screening.forward, split.validation.len() as u64);
                assert!(rec.validation_used <= 5);
            }
        }
        assert_eq!(state.labeled_count(), 15);
        assert_eq!(oracle.revealed_count(), 15);
    }
}

#[test]
fn acquisition_is_reproducible_and_clamps_to_remaining() {
    let (split, p) = setup();
    let models = vec![p];
    let counter = PassCounter::new();
    let run = |method: &AcquisitionMethod| {
        let mut state = PoolState::new(split.train.len(), 7, 2).unwrap();
        let mut oracle = Oracle::new();
        let ctx = AcquisitionContext {
            models: &models,
            split: &split,
            seed: 9,
            counter: &counter,
        };
        acquire(&mut state, &mut oracle, method, &ctx).unwrap().selected
    };
    for m in methods().into_iter().filter(|m| m.ensemble_size() == 1) {
        assert_eq!(run(&m), run(&m));
    }
    let mut state = PoolState::new(split.train.len(), 1000, 1).unwrap();
    let mut oracle = Oracle::new();
    let ctx = AcquisitionContext {
        models: &models,
        split: &split,
        seed: 1,
        counter: &counter,
    };
    let rec = acquire(&mut state, &mut oracle, &AcquisitionMethod::Pcc, &ctx).unwrap();
    assert_eq!(rec.selected.len(), split.train.len());
    assert!(matches!(
        acquire(&mut state, &mut oracle, &AcquisitionMethod::Pcc, &ctx),
        Err(Error::PoolExhausted)
    ));
}

#[test]
fn perfect_validation_falls_back_to_random() {
    let split = make_synthetic(2, 4, 40, 6.0, 1).unwrap();
    let p = init_params::<f64>(&ArchSpec::mlp(4, 2), 0, InitMode::Random).unwrap();
    let rows: Vec<&[f64]> = split.train.inputs().iter().map(Vec::as_slice).collect();
    let labels: Vec<usize> = (0..split.train.len())
        .map(|i| split.train.ablation_label(i).unwrap())
        .collect();
    let hyper = TrainHyper {
        epochs: 30,
        ..TrainHyper::default()
    };
    let trained = train(&p, &rows, &labels, &hyper, Tally::none()).unwrap();
    assert!(misclassified_subset(&trained, &split.validation, Tally::none())
        .unwrap()
        .is_empty());
    let counter = PassCounter::new();
    let mut state = PoolState::new(split.train.len(), 4, 1).unwrap();
    let models = vec![trained];
    let ctx = AcquisitionContext {
        models: &models,
        split: &split,
        seed: 5,
        counter: &counter,
    };
    let method = AcquisitionMethod::Pfk {
        pseudo: PseudoMethod::Argmax,
    };
    let rec = acquire(&mut state, &mut Oracle::new(), &method, &ctx).unwrap();
    assert!(rec.fallback);
    assert_eq!(rec.acquisition, Passes::default());
    assert_eq!(
        rec.selected,
        baseline_random(&(0..split.train.len()).collect::<Vec<_>>(), 4, 5).unwrap()
    );
}

#[test]
fn method_validation_and_serde() {
    assert!(AcquisitionMethod::Pfk {
        pseudo: PseudoMethod::McMi
    }
    .validate()
    .is_err());
    assert!(AcquisitionMethod::Uncertainty {
        metric: UncertaintyMetric::Bald,
        k: 1,
        e: 1
    }
    .validate()
    .is_err());
    let m: AcquisitionMethod = serde_json::from_str(r#"{"kind":"uncertainty","metric":"varR","k":10}"#).unwrap();
    assert_eq!(
        m,
        AcquisitionMethod::Uncertainty {
            metric: UncertaintyMetric::VarR,
            k: 10,
            e: 1
        }
    );
    let m: AcquisitionMethod = serde_json::from_str(r#"{"kind":"pfk","pseudo":"trusted_match"}"#).unwrap();
    assert_eq!(m.label(), "pfk_trusted_match");
}
