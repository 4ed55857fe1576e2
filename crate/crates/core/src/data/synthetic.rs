use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DatasetSplit, InputShape, Sample, TrainPool};
use crate::error::{Error, Result};
use crate::rng;

/// Gaussian-blob dataset parameters. `split` holds the train/validation/test
/// proportions applied per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub separation: f64,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

fn default_split() -> [f64; 3] {
    [0.70, 0.15, 0.15]
}

/// Isotropic unit-variance Gaussian classes with means at distance
/// `class_separation` from the origin, split 70/15/15.
pub fn make_synthetic(
    num_classes: usize,
    dim: usize,
    per_class_count: usize,
    class_separation: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    make_synthetic_with(
        &SyntheticSpec {
            num_classes,
            dim,
            per_class: per_class_count,
            separation: class_separation,
            split: default_split(),
        },
        seed,
    )
}

pub fn make_synthetic_with(spec: &SyntheticSpec, seed: u64) -> Result<DatasetSplit> {
    if spec.num_classes < 2 || spec.dim < 1 || spec.per_class < 1 {
        return Err(Error::invalid(format!(
            "synthetic data needs >= 2 classes, dim >= 1 and per_class >= 1 (got {}, {}, {})",
            spec.num_classes, spec.dim, spec.per_class
        )));
    }
    if !spec.separation.is_finite() || spec.separation < 0.0 {
        return Err(Error::invalid("class separation must be finite and >= 0"));
    }
    let total: f64 = spec.split.iter().sum();
    if spec.split.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split proportions must be non-negative and sum to 1"));
    }

    let mut r = rng::rng(rng::derive(seed, "synthetic"));
    let directions = class_directions(spec.num_classes, spec.dim, &mut r);

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for (c, dir) in directions.iter().enumerate() {
        let mut members: Vec<Sample> = (0..spec.per_class)
            .map(|_| {
                let input = dir
                    .iter()
                    .map(|u| spec.separation * u + r.sample::<f64, _>(StandardNormal))
                    .collect();
                Sample::labeled(input, c)
            })
            .collect();
        let n_train = (spec.split[0] * spec.per_class as f64).round() as usize;
        let n_val = ((spec.split[1] * spec.per_class as f64).round() as usize)
            .min(spec.per_class - n_train.min(spec.per_class));
        let rest = members.split_off(n_train.min(members.len()));
        train.append(&mut members);
        let mut rest = rest;
        let tail = rest.split_off(n_val.min(rest.len()));
        validation.append(&mut rest);
        test.extend(tail);
    }
    train.shuffle(&mut r);
    validation.shuffle(&mut r);
    test.shuffle(&mut r);
    Ok(DatasetSplit {
        shape: InputShape::Flat { dim: spec.dim },
        num_classes: spec.num_classes,
        train: TrainPool::new(train),
        validation,
        test,
    })
}

/// Basis vectors when there are enough dimensions, otherwise random unit
/// directions.
fn class_directions(num_classes: usize, dim: usize, r: &mut impl Rng) -> Vec<Vec<f64>> {
    if num_classes <= dim {
        return (0..num_classes)
            .map(|c| (0..dim).map(|i| if i == c { 1.0 } else { 0.0 }).collect())
            .collect();
    }
    (0..num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}
