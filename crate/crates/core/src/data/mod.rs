//! Datasets: samples, train/validation/test splits, class decimation, and
//! the on-disk formats (IDX in, FMAT in/out).

mod fmat;
mod idx;
mod synthetic;

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

pub use fmat::{read_matrix, write_matrix, FMAT_HEADER_LEN, FMAT_MAGIC};
pub use idx::{load_idx, load_mnist_split, IdxSet};
pub use synthetic::{make_synthetic, make_synthetic_with, SyntheticSpec};

use crate::error::{Error, Result};
use crate::rng;

/// Layout of one input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputShape {
    Flat {
        dim: usize,
    },
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl InputShape {
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Flat { dim } => dim,
            InputShape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_image(&self) -> bool {
        matches!(self, InputShape::Image { .. })
    }
}

/// One input with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: Option<usize>,
}

impl Sample {
    pub fn labeled(input: Vec<f64>, label: usize) -> Self {
        Sample {
            input,
            label: Some(label),
        }
    }
}

/// The unlabeled train pool. Ground-truth labels are kept but masked: they are
/// only reachable through [`Oracle::reveal`] and the explicit
/// [`TrainPool::ablation_label`] path used by the true-label ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPool {
    inputs: Vec<Vec<f64>>,
    masked: Vec<Option<usize>>,
}

impl TrainPool {
    pub fn new(samples: Vec<Sample>) -> Self {
        let (inputs, masked) = samples.into_iter().map(|s| (s.input, s.label)).unzip();
        TrainPool { inputs, masked }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    /// True label for the `S = y` ablation. Not part of the normal selection path.
    pub fn ablation_label(&self, i: usize) -> Option<usize> {
        self.masked.get(i).copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub shape: InputShape,
    pub num_classes: usize,
    pub train: TrainPool,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Simulated annotator. Each train label can be revealed once.
#[derive(Debug, Default, Clone)]
pub struct Oracle {
    revealed: BTreeMap<usize, usize>,
}

impl Oracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reveal(&mut self, pool: &TrainPool, index: usize) -> Result<usize> {
        if self.revealed.contains_key(&index) {
            return Err(Error::AlreadyRevealed(index));
        }
        let label = pool
            .masked
            .get(index)
            .copied()
            .flatten()
            .ok_or_else(|| Error::invalid(format!("train index {index} has no label")))?;
        self.revealed.insert(index, label);
        Ok(label)
    }

    pub fn label(&self, index: usize) -> Option<usize> {
        self.revealed.get(&index).copied()
    }

    pub fn revealed_count(&self) -> usize {
        self.revealed.len()
    }
}

/// Decimates the train pool of each affected class by `ratio`, keeping
/// `max(1, floor(n_c / ratio))` samples chosen uniformly without replacement.
/// Validation and test sets are returned untouched and the relative order of
/// kept train samples is preserved.
pub fn apply_imbalance(
    split: &DatasetSplit,
    ratio: f64,
    affected_classes: &[usize],
    seed: u64,
) -> Result<DatasetSplit> {
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return Err(Error::invalid(format!("imbalance ratio {ratio} must be >= 1")));
    }
    for &c in affected_classes {
        if c >= split.num_classes {
            return Err(Error::UnknownClass {
                class: c,
                num_classes: split.num_classes,
            });
        }
    }
    let mut keep = vec![true; split.train.len()];
    let mut classes: Vec<usize> = affected_classes.to_vec();
    classes.sort_unstable();
    classes.dedup();
    for &c in &classes {
        let members: Vec<usize> = split
            .train
            .masked
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(c))
            .map(|(i, _)| i)
            .collect();
        let n = members.len();
        if n == 0 {
            continue;
        }
        let kept = ((n as f64 / ratio).floor() as usize).max(1);
        let mut r = rng::rng(rng::mix(rng::derive(seed, "imbalance"), c as u64));
        let chosen = index::sample(&mut r, n, kept);
        let mut mask = vec![false; n];
        for i in chosen.iter() {
            mask[i] = true;
        }
        for (pos, &i) in members.iter().enumerate() {
            keep[i] = mask[pos];
        }
    }
    let (inputs, masked) = split
        .train
        .inputs
        .iter()
        .zip(&split.train.masked)
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|((x, l), _)| (x.clone(), *l))
        .unzip();
    Ok(DatasetSplit {
        shape: split.shape,
        num_classes: split.num_classes,
        train: TrainPool { inputs, masked },
        validation: split.validation.clone(),
        test: split.test.clone(),
    })
}

/// Per-class counts of labels in `labels`.
pub fn class_counts<'a>(labels: impl IntoIterator<Item = &'a Option<usize>>, num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for l in labels.into_iter().flatten() {
        if *l < num_classes {
            counts[*l] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_split(per_class: &[usize]) -> DatasetSplit {
        let mut train = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                train.push(Sample::labeled(vec![c as f64, i as f64], c));
            }
        }
        DatasetSplit {
            shape: InputShape::Flat { dim: 2 },
            num_classes: per_class.len(),
            train: TrainPool::new(train),
            validation: vec![Sample::labeled(vec![0.0, 0.0], 0)],
            test: vec![Sample::labeled(vec![1.0, 1.0], 1)],
        }
    }

    #[test]
    fn ratio_one_is_identity() {
        let s = toy_split(&[10, 20, 30]);
        let out = apply_imbalance(&s, 1.0, &[0, 1, 2], 3).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn hundredfold_keeps_floor() {
        let s = toy_split(&[5000, 30, 7]);
        let out = apply_imbalance(&s, 100.0, &[0, 1], 9).unwrap();
        let counts = class_counts(&out.train.masked, 3);
        assert_eq!(counts, vec![50, 1, 7]);
        assert_eq!(out.validation, s.validation);
        assert_eq!(out.test, s.test);
    }

    #[test]
    fn unaffected_classes_are_unchanged_and_order_kept() {
        let s = toy_split(&[40, 40]);
        let out = apply_imbalance(&s, 4.0, &[0], 1).unwrap();
        let class1: Vec<_> = (0..out.train.len())
            .filter(|&i| out.train.ablation_label(i) == Some(1))
            .map(|i| out.train.input(i).to_vec())
            .collect();
        let orig: Vec<_> = (0..s.train.len())
            .filter(|&i| s.train.ablation_label(i) == Some(1))
            .map(|i| s.train.input(i).to_vec())
            .collect();
        assert_eq!(class1, orig);
        let kept0: Vec<f64> = (0..out.train.len())
            .filter(|&i| out.train.ablation_label(i) == Some(0))
            .map(|i| out.train.input(i)[1])
            .collect();
        assert_eq!(kept0.len(), 10);
        assert!(kept0.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn imbalance_is_seeded() {
        let s = toy_split(&[100, 100]);
        let a = apply_imbalance(&s, 10.0, &[1], 5).unwrap();
        let b = apply_imbalance(&s, 10.0, &[1], 5).unwrap();
        let c = apply_imbalance(&s, 10.0, &[1], 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_class_and_bad_ratio_rejected() {
        let s = toy_split(&[3, 3]);
        assert!(matches!(
            apply_imbalance(&s, 2.0, &[2], 0),
            Err(Error::UnknownClass { class: 2, .. })
        ));
        assert!(apply_imbalance(&s, 0.5, &[0], 0).is_err());
        assert!(apply_imbalance(&s, f64::NAN, &[0], 0).is_err());
    }

    #[test]
    fn oracle_reveals_once() {
        let s = toy_split(&[2, 2]);
        let mut o = Oracle::new();
        assert_eq!(o.reveal(&s.train, 3).unwrap(), 1);
        assert!(matches!(o.reveal(&s.train, 3), Err(Error::AlreadyRevealed(3))));
        assert_eq!(o.revealed_count(), 1);
        assert_eq!(o.label(3), Some(1));
    }
}
