//! One active-learning iteration: find misclassified validation points,
//! cluster them down to the pool size, match them against the unlabeled
//! train points through a kernel, and reveal the labels of the best matches.
//! Also hosts the random and MC-dropout uncertainty baselines.

mod baselines;
mod greedy;
mod kcenter;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use baselines::{baseline_random, top_p, uncertainty_score, uncertainty_scores, UncertaintyMetric};
pub use greedy::select_pool;
pub use kcenter::{covering_radius, descriptor_distances, k_center_greedy};

use crate::data::{DatasetSplit, Oracle, Sample};
use crate::error::{Error, Result};
use crate::features::{extract_descriptors, extract_descriptors_with_probs, extract_joint, DescriptorSet};
use crate::kernels::{pcc_kernel, pfk, KernelMatrix};
use crate::model::{argmax, predict_mc, ModelParams, PassCounter, Passes, Phase, Real, Tally};
use crate::pseudo::{
    mc_mi_metric, mc_scores, mc_trace_metric, sample_neighborhood, trusted_match, PseudoMethod, SamplerSpec,
    DEFAULT_RIDGE,
};
use crate::rng;

fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

fn default_ensemble() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AcquisitionMethod {
    Random,
    /// Top-P by an MC-dropout uncertainty over `k` passes of each of `e`
    /// independently trained models.
    Uncertainty {
        metric: UncertaintyMetric,
        k: usize,
        #[serde(default = "default_ensemble")]
        e: usize,
    },
    /// Descriptor correlation only.
    Pcc,
    /// Practical Fisher kernel with a single-pass pseudo-labeler.
    Pfk {
        pseudo: PseudoMethod,
    },
    /// Practical Fisher kernel with Monte-Carlo neighborhood pseudo-labels.
    PfkMc {
        metric: PseudoMethod,
        sampler: SamplerSpec,
        #[serde(default = "default_ridge")]
        ridge: f64,
    },
}

impl AcquisitionMethod {
    pub fn validate(&self) -> Result<()> {
        match self {
            AcquisitionMethod::Uncertainty { metric, k, e } => {
                if *e == 0 || *k == 0 || (*k * *e < 2 && *metric != UncertaintyMetric::Entropy) {
                    return Err(Error::invalid(format!("{} needs K*E >= 2 and E >= 1", metric.name())));
                }
            }
            AcquisitionMethod::Pfk { pseudo } if pseudo.is_mc() => {
                return Err(Error::invalid("Monte-Carlo pseudo-labels belong to pfk_mc"));
            }
            AcquisitionMethod::PfkMc { metric, sampler, ridge } => {
                if !metric.is_mc() {
                    return Err(Error::invalid("pfk_mc needs mc_trace or mc_mi"));
                }
                if !(*ridge >= 0.0) {
                    return Err(Error::invalid("ridge must be >= 0"));
                }
                sampler.validate()?;
            }
            _ => {}
        }
        Ok(())
    }

    /// Short default label for reports.
    pub fn label(&self) -> String {
        match self {
            AcquisitionMethod::Random => "random".into(),
            AcquisitionMethod::Uncertainty { metric, .. } => metric.name().into(),
            AcquisitionMethod::Pcc => "pcc".into(),
            AcquisitionMethod::Pfk { pseudo } => format!("pfk_{}", pseudo.name()),
            AcquisitionMethod::PfkMc { metric, .. } => format!("pfk_{}", metric.name()),
        }
    }

    /// Number of models acquisition needs.
    pub fn ensemble_size(&self) -> usize {
        match self {
            AcquisitionMethod::Uncertainty { e, .. } => *e,
            _ => 1,
        }
    }

    /// Acquisition-phase passes one iteration must cost, given its record.
    pub fn expected_passes(&self, rec: &AcquisitionRecord, num_classes: usize) -> Passes {
        if rec.fallback {
            return Passes::default();
        }
        let (m, n) = (rec.validation_used as u64, rec.unlabeled as u64);
        match self {
            AcquisitionMethod::Random => Passes::default(),
            AcquisitionMethod::Uncertainty { k, e, .. } => Passes {
                forward: (*e * *k) as u64 * n,
                backward: 0,
            },
            AcquisitionMethod::Pcc => Passes {
                forward: m + n,
                backward: 0,
            },
            AcquisitionMethod::Pfk { .. } => Passes {
                forward: m + n,
                backward: m + n,
            },
            AcquisitionMethod::PfkMc { sampler, .. } => {
                let k = sampler.k as u64;
                Passes {
                    forward: m + n + k * n,
                    backward: m + n + k * num_classes as u64 * n,
                }
            }
        }
    }
}

/// Labeled set and iteration bookkeeping of one experiment arm.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    labeled: BTreeSet<usize>,
    iteration: usize,
    pool_size: usize,
    iterations: usize,
    pool_len: usize,
}

impl PoolState {
    pub fn new(pool_len: usize, pool_size: usize, iterations: usize) -> Result<Self> {
        if pool_size == 0 || iterations == 0 {
            return Err(Error::invalid("pool size and iteration count must be positive"));
        }
        Ok(PoolState {
            labeled: BTreeSet::new(),
            iteration: 0,
            pool_size,
            iterations,
            pool_len,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn total_budget(&self) -> usize {
        self.pool_size * self.iterations
    }

    /// Sorted labeled indices.
    pub fn labeled(&self) -> Vec<usize> {
        self.labeled.iter().copied().collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.len()
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labeled.contains(&i)
    }

    pub fn unlabeled(&self) -> Vec<usize> {
        (0..self.pool_len).filter(|i| !self.labeled.contains(i)).collect()
    }

    /// Adds one iteration's selection.
    pub fn add(&mut self, selected: &[usize]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &i in selected {
            if i >= self.pool_len {
                return Err(Error::invalid(format!("index {i} outside a pool of {}", self.pool_len)));
            }
            if self.labeled.contains(&i) || !seen.insert(i) {
                return Err(Error::AlreadyRevealed(i));
            }
        }
        self.labeled.extend(selected);
        self.iteration += 1;
        Ok(())
    }
}

/// What one acquisition did, for reports and pass checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRecord {
    pub iteration: usize,
    pub selected: Vec<usize>,
    /// Pseudo-label of each selected point, for PFK methods.
    pub pseudo_labels: Option<Vec<usize>>,
    pub validation_misclassified: usize,
    pub validation_used: usize,
    pub unlabeled: usize,
    /// No misclassified validation point: selection fell back to random.
    pub fallback: bool,
    pub screening: Passes,
    pub acquisition: Passes,
}

/// Deterministic forward over the validation set.
#[derive(Debug, Clone)]
pub struct Screening {
    pub misclassified: Vec<usize>,
    pub descriptors: DescriptorSet,
    pub labels: Vec<usize>,
}

fn labels_of(samples: &[Sample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| s.label.ok_or(Error::invalid("validation sample without a label")))
        .collect()
}

pub fn screen_validation<T: Real>(
    params: &ModelParams<T>,
    validation: &[Sample],
    tally: Tally<'_>,
) -> Result<Screening> {
    let labels = labels_of(validation)?;
    let rows: Vec<&[f64]> = validation.iter().map(|s| s.input.as_slice()).collect();
    let index: Vec<usize> = (0..validation.len()).collect();
    let (descriptors, probs) = extract_descriptors_with_probs(params, &rows, &index, tally)?;
    let misclassified = (0..validation.len())
        .filter(|&i| argmax(probs.row(i).iter().copied()) != labels[i])
        .collect();
    Ok(Screening {
        misclassified,
        descriptors,
        labels,
    })
}

/// Validation indices the model gets wrong under a deterministic forward.
pub fn misclassified_subset<T: Real>(
    params: &ModelParams<T>,
    validation: &[Sample],
    tally: Tally<'_>,
) -> Result<Vec<usize>> {
    Ok(screen_validation(params, validation, tally)?.misclassified)
}

/// Models and data for one acquisition.
#[derive(Debug, Clone, Copy)]
pub struct AcquisitionContext<'a, T> {
    /// `models[0]` is the current task model; ensembles use the rest.
    pub models: &'a [ModelParams<T>],
    pub split: &'a DatasetSplit,
    /// Per-iteration seed.
    pub seed: u64,
    pub counter: &'a PassCounter,
}

/// Runs one iteration of the chosen method, reveals the selected labels and
/// updates `state`.
pub fn acquire<T: Real>(
    state: &mut PoolState,
    oracle: &mut Oracle,
    method: &AcquisitionMethod,
    ctx: &AcquisitionContext<'_, T>,
) -> Result<AcquisitionRecord> {
    method.validate()?;
    let model = ctx.models.first().ok_or(Error::Empty("model list"))?;
    if ctx.models.len() < method.ensemble_size() {
        return Err(Error::invalid(format!(
            "{} needs {} models, got {}",
            method.label(),
            method.ensemble_size(),
            ctx.models.len()
        )));
    }
    let unlabeled = state.unlabeled();
    if unlabeled.is_empty() {
        return Err(Error::PoolExhausted);
    }
    let p = state.pool_size().min(unlabeled.len());
    let split = ctx.split;
    let before_screen = ctx.counter.get(Phase::Screening);
    let before = ctx.counter.get(Phase::Acquisition);
    let acq = Tally::new(ctx.counter, Phase::Acquisition);
    let train_rows: Vec<&[f64]> = unlabeled.iter().map(|&i| split.train.input(i)).collect();

    let mut rec = AcquisitionRecord {
        iteration: state.iteration() + 1,
        selected: Vec::new(),
        pseudo_labels: None,
        validation_misclassified: 0,
        validation_used: 0,
        unlabeled: unlabeled.len(),
        fallback: false,
        screening: Passes::default(),
        acquisition: Passes::default(),
    };

    match method {
        AcquisitionMethod::Random => {
            rec.selected = baseline_random(&unlabeled, p, ctx.seed)?;
        }
        AcquisitionMethod::Uncertainty { metric, k, e } => {
            let mut stacks: Vec<Vec<ndarray::Array2<f64>>> = Vec::with_capacity(*e);
            for (m, params) in ctx.models.iter().take(*e).enumerate() {
                stacks.push(predict_mc(params, &train_rows, *k, rng::mix(ctx.seed, m as u64), acq)?);
            }
            let joined: Vec<ndarray::Array2<f64>> = (0..unlabeled.len())
                .map(|i| {
                    let views: Vec<_> = stacks.iter().map(|s| s[i].view()).collect();
                    ndarray::concatenate(ndarray::Axis(0), &views).expect("same class count")
                })
                .collect();
            let scores = uncertainty_scores(&joined, *metric)?;
            rec.selected = top_p(&scores, p).into_iter().map(|i| unlabeled[i]).collect();
        }
        AcquisitionMethod::Pcc | AcquisitionMethod::Pfk { .. } | AcquisitionMethod::PfkMc { .. } => {
            let screen = screen_validation(model, &split.validation, Tally::new(ctx.counter, Phase::Screening))?;
            rec.validation_misclassified = screen.misclassified.len();
            if screen.misclassified.is_empty() {
                rec.fallback = true;
                rec.selected = baseline_random(&unlabeled, p, ctx.seed)?;
            } else {
                let used = if screen.misclassified.len() > p {
                    let hard = screen.descriptors.select(&screen.misclassified)?;
                    k_center_greedy(&hard, p)?
                        .into_iter()
                        .map(|pos| screen.misclassified[pos])
                        .collect()
                } else {
                    screen.misclassified.clone()
                };
                rec.validation_used = used.len();
                let (kernel, targets) = match_kernel(method, model, &screen, &used, &unlabeled, &train_rows, ctx, acq)?;
                rec.selected = select_pool(&kernel, p)?;
                if let Some(t) = targets {
                    let pos: std::collections::HashMap<usize, usize> =
                        unlabeled.iter().enumerate().map(|(p, &i)| (i, p)).collect();
                    rec.pseudo_labels = Some(rec.selected.iter().map(|i| t[pos[i]]).collect());
                }
            }
        }
    }

    for &i in &rec.selected {
        oracle.reveal(&split.train, i)?;
    }
    state.add(&rec.selected)?;
    rec.screening = ctx.counter.get(Phase::Screening) - before_screen;
    rec.acquisition = ctx.counter.get(Phase::Acquisition) - before;
    Ok(rec)
}

#[allow(clippy::too_many_arguments)]
fn match_kernel<T: Real>(
    method: &AcquisitionMethod,
    model: &ModelParams<T>,
    screen: &Screening,
    used: &[usize],
    unlabeled: &[usize],
    train_rows: &[&[f64]],
    ctx: &AcquisitionContext<'_, T>,
    acq: Tally<'_>,
) -> Result<(KernelMatrix, Option<Vec<usize>>)> {
    let split = ctx.split;
    let val_rows: Vec<&[f64]> = used.iter().map(|&i| split.validation[i].input.as_slice()).collect();
    let val_labels: Vec<usize> = used.iter().map(|&i| screen.labels[i]).collect();
    if let AcquisitionMethod::Pcc = method {
        let zv = extract_descriptors(model, &val_rows, used, acq)?;
        let z = extract_descriptors(model, train_rows, unlabeled, acq)?;
        return Ok((pcc_kernel(&zv, &z)?, None));
    }
    let (zv, gv, _) = extract_joint(model, &val_rows, used, |pos, _, _| Ok(val_labels[pos]), acq)?;
    let d = model.num_classes();
    let (z, g, targets) = match method {
        AcquisitionMethod::Pfk { pseudo } => {
            let pseudo = *pseudo;
            extract_joint(
                model,
                train_rows,
                unlabeled,
                |pos, desc, probs| match pseudo {
                    PseudoMethod::Oracle => split.train.ablation_label(unlabeled[pos]).ok_or(Error::MissingContext {
                        method: "oracle",
                        what: "true label",
                    }),
                    PseudoMethod::Argmax => Ok(argmax(probs.iter().copied())),
                    PseudoMethod::TrustedMatch => {
                        Ok(trusted_match(desc, &screen.descriptors, &screen.labels, d)?.label)
                    }
                    PseudoMethod::McTrace | PseudoMethod::McMi => {
                        Err(Error::invalid("Monte-Carlo pseudo-labels belong to pfk_mc"))
                    }
                },
                acq,
            )?
        }
        AcquisitionMethod::PfkMc { metric, sampler, ridge } => {
            let spec = SamplerSpec {
                seed: rng::mix(sampler.seed, ctx.seed),
                ..sampler.clone()
            };
            let mut labels = Vec::with_capacity(unlabeled.len());
            for (&i, row) in unlabeled.iter().zip(train_rows) {
                let neighbors = sample_neighborhood(row, split.shape, &spec, i as u64)?;
                let s = mc_scores(model, &neighbors, acq)?;
                let scores = if *metric == PseudoMethod::McTrace {
                    mc_trace_metric(&s.z, &s.g)?
                } else {
                    mc_mi_metric(&s.z, &s.g, *ridge)?
                };
                labels.push(crate::pseudo::argmax_lowest(&scores));
            }
            extract_joint(model, train_rows, unlabeled, |pos, _, _| Ok(labels[pos]), acq)?
        }
        _ => unreachable!("baselines handled by the caller"),
    };
    Ok((pfk(&zv, &gv, &z, &g)?, Some(targets)))
}

#[cfg(test)]
mod tests;
