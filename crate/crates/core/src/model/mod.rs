//! The task classifier: two fixed architectures with tapped intermediate
//! tensors, mini-batch SGD, MC-dropout inference, rotation pretraining and
//! per-phase pass accounting.

mod arch;
mod checkpoint;
mod counter;
mod network;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use arch::{ArchKind, ArchSpec, LayerOp, LayerSpec, CONV_KERNEL, DEFAULT_DROPOUT};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MANIFEST};
pub use counter::{PassCounter, Passes, Phase, Tally};
pub use network::{
    backward, backward_from, batch, cross_entropy, forward, forward_shifted, output_gradient, softmax_rows,
    ForwardMode, Gradients, LayerParams, ModelParams, Real, ScaleView, TappedActivations,
};

use crate::data::{InputShape, Sample};
use crate::error::{Error, Result};
use crate::rng;

/// Rows per forward call when sweeping a whole dataset.
pub const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy)]
pub enum InitMode<'a, T> {
    Random,
    /// Copy every layer but the classifier head from a trained source.
    FromPretrained(&'a ModelParams<T>),
}

/// Fan-in scaled uniform init: weights in +-sqrt(6 / fan_in), zero bias.
pub fn init_params<T: Real>(arch: &ArchSpec, seed: u64, mode: InitMode<'_, T>) -> Result<ModelParams<T>> {
    arch.validate()?;
    let specs = arch.layers()?;
    let random_layer = |li: usize, spec: &LayerSpec| {
        let bound = (6.0 / spec.fan_in() as f64).sqrt();
        let mut r = rng::rng(rng::mix(rng::derive(seed, "init"), li as u64));
        LayerParams {
            weight: Array2::from_shape_simple_fn((spec.outputs(), spec.fan_in()), || {
                T::of(r.random_range(-bound..bound))
            }),
            bias: ndarray::Array1::zeros(spec.outputs()),
        }
    };
    let last = specs.len() - 1;
    let layers = match mode {
        InitMode::Random => specs.iter().enumerate().map(|(i, s)| random_layer(i, s)).collect(),
        InitMode::FromPretrained(source) => {
            let src = source.specs();
            let compatible = src.len() == specs.len()
                && src[..last]
                    .iter()
                    .zip(&specs[..last])
                    .all(|(a, b)| a.op == b.op && a.relu == b.relu && a.maxpool == b.maxpool)
                && src[last].fan_in() == specs[last].fan_in();
            if !compatible {
                return Err(Error::Shape(
                    "pretrained body does not match the target architecture".into(),
                ));
            }
            let mut layers: Vec<LayerParams<T>> = source.layers[..last].to_vec();
            layers.push(random_layer(last, &specs[last]));
            layers
        }
    };
    ModelParams::new(arch.clone(), layers)
}

/// SGD settings. `lr_decay` multiplies the learning rate every `decay_every`
/// epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "defaults::decay_every")]
    pub decay_every: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn epochs() -> usize {
        50
    }
    pub fn batch_size() -> usize {
        25
    }
    pub fn learning_rate() -> f64 {
        0.05
    }
    pub fn lr_decay() -> f64 {
        0.1
    }
    pub fn decay_every() -> usize {
        15
    }
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            learning_rate: defaults::learning_rate(),
            lr_decay: defaults::lr_decay(),
            decay_every: defaults::decay_every(),
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::invalid("epochs, batch_size and decay_every must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("lr_decay must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainHyper { seed, ..self.clone() }
    }
}

/// Mini-batch SGD on mean cross-entropy with dropout active. Each epoch sees
/// every sample once, so the counter grows by `epochs * n` forward and
/// `epochs * n` backward passes.
pub fn train<T: Real>(
    params: &ModelParams<T>,
    inputs: &[&[f64]],
    labels: &[usize],
    hyper: &TrainHyper,
    tally: Tally<'_>,
) -> Result<ModelParams<T>> {
    hyper.validate()?;
    if inputs.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if inputs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= params.num_classes()) {
        return Err(Error::UnknownClass {
            class: bad,
            num_classes: params.num_classes(),
        });
    }
    let mut p = params.clone();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut shuffler = rng::rng(rng::derive(hyper.seed, "shuffle"));
    let dropout_seed = rng::derive(hyper.seed, "dropout");
    let mut step = 0u64;
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut shuffler);
        let lr = T::of(hyper.learning_rate_at(epoch));
        for chunk in order.chunks(hyper.batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i]).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let x = batch::<T>(&rows);
            let acts = forward(
                &p,
                x.view(),
                ForwardMode::Dropout {
                    seed: rng::mix(dropout_seed, step),
                },
                tally,
            )?;
            let loss = cross_entropy(&acts.logits, &targets);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            let g = backward(&p, &acts, &targets, tally)?;
            for (layer, grad) in p.layers.iter_mut().zip(g.params.expect("param grads")) {
                layer.weight.scaled_add(-lr, &grad.weight);
                layer.bias.scaled_add(-lr, &grad.bias);
            }
            step += 1;
        }
    }
    Ok(p)
}

/// Deterministic softmax outputs for every input, in f64.
pub fn predict<T: Real>(params: &ModelParams<T>, inputs: &[&[f64]], tally: Tally<'_>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((inputs.len(), params.num_classes()));
    for (c, chunk) in inputs.chunks(CHUNK).enumerate() {
        let acts = forward(params, batch::<T>(chunk).view(), ForwardMode::Deterministic, tally)?;
        out.slice_mut(ndarray::s![c * CHUNK..c * CHUNK + chunk.len(), ..])
            .assign(&acts.probs.mapv(|v| v.f64()));
    }
    Ok(out)
}

/// `K` stochastic dropout passes per input: element `i` of the result is the
/// `K x D` stack of softmax vectors for input `i`. Pass 0 uses `seed` itself,
/// so `K = 1` equals one dropout forward with that seed.
pub fn predict_mc<T: Real>(
    params: &ModelParams<T>,
    inputs: &[&[f64]],
    k: usize,
    seed: u64,
    tally: Tally<'_>,
) -> Result<Vec<Array2<f64>>> {
    if k < 1 {
        return Err(Error::invalid("MC dropout needs K >= 1"));
    }
    let d = params.num_classes();
    let mut out = vec![Array2::zeros((k, d)); inputs.len()];
    for pass in 0..k {
        let pass_seed = if pass == 0 { seed } else { rng::mix(seed, pass as u64) };
        for (c, chunk) in inputs.chunks(CHUNK).enumerate() {
            let chunk_seed = if c == 0 {
                pass_seed
            } else {
                rng::mix(pass_seed, 1 << 32 | c as u64)
            };
            let acts = forward(
                params,
                batch::<T>(chunk).view(),
                ForwardMode::Dropout { seed: chunk_seed },
                tally,
            )?;
            for (r, probs) in acts.probs.rows().into_iter().enumerate() {
                out[c * CHUNK + r].row_mut(pass).assign(&probs.mapv(|v| v.f64()));
            }
        }
    }
    Ok(out)
}

/// Lowest index among the maxima.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v || (i == 0 && v.is_nan()) {
            best = i;
            best_v = v;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `None` for classes absent from the evaluated set.
    pub per_class: Vec<Option<f64>>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

impl Evaluation {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::UnknownClass {
                    class: t.max(p),
                    num_classes,
                });
            }
            confusion[t][p] += 1;
        }
        let correct: u64 = (0..num_classes).map(|c| confusion[c][c]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Ok(Evaluation {
            accuracy: correct as f64 / truth.len() as f64,
            per_class,
            confusion,
        })
    }

    /// Mean of per-class accuracies over present classes.
    pub fn mean_class_accuracy(&self) -> f64 {
        self.mean_over((0..self.per_class.len()).collect::<Vec<_>>().as_slice())
    }

    /// Mean per-class accuracy over `classes` that are present.
    pub fn mean_over(&self, classes: &[usize]) -> f64 {
        let vals: Vec<f64> = classes
            .iter()
            .filter_map(|&c| self.per_class.get(c).copied().flatten())
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

pub fn evaluate<T: Real>(params: &ModelParams<T>, dataset: &[Sample], tally: Tally<'_>) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let truth: Vec<usize> = dataset
        .iter()
        .map(|s| s.label.ok_or(Error::invalid("evaluation sample without a label")))
        .collect::<Result<_>>()?;
    let rows: Vec<&[f64]> = dataset.iter().map(|s| s.input.as_slice()).collect();
    let probs = predict(params, &rows, tally)?;
    let predicted: Vec<usize> = probs.axis_iter(Axis(0)).map(|r| argmax(r.iter().copied())).collect();
    Evaluation::from_predictions(&truth, &predicted, params.num_classes())
}

/// Rotates each channel plane of a square image by `quarter_turns * 90`
/// degrees counter-clockwise.
pub fn rotate_quarter(image: &[f64], shape: InputShape, quarter_turns: usize) -> Result<Vec<f64>> {
    let InputShape::Image {
        channels,
        height,
        width,
    } = shape
    else {
        return Err(Error::invalid("rotation needs image-shaped inputs"));
    };
    if height != width {
        return Err(Error::invalid("rotation needs square images"));
    }
    let n = height;
    let mut cur = image.to_vec();
    for _ in 0..quarter_turns % 4 {
        let mut next = vec![0.0; cur.len()];
        for c in 0..channels {
            let base = c * n * n;
            for y in 0..n {
                for x in 0..n {
                    next[base + y * n + x] = cur[base + x * n + (n - 1 - y)];
                }
            }
        }
        cur = next;
    }
    Ok(cur)
}

/// Each image becomes four samples rotated by 0, 90, 180 and 270 degrees,
/// labeled 0..3.
pub fn rotation_dataset(images: &[&[f64]], shape: InputShape) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut inputs = Vec::with_capacity(images.len() * 4);
    let mut labels = Vec::with_capacity(images.len() * 4);
    for img in images {
        for k in 0..4 {
            inputs.push(rotate_quarter(img, shape, k)?);
            labels.push(k);
        }
    }
    Ok((inputs, labels))
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome<T> {
    /// Task-architecture parameters with the pretrained body and the input
    /// model's head.
    pub params: ModelParams<T>,
    /// The 4-way rotation classifier.
    pub rotation: ModelParams<T>,
}

/// Self-supervised pretraining: learn to classify the rotation of unlabeled
/// images, then keep the body and drop the rotation head.
pub fn pretrain_rotations<T: Real>(
    params: &ModelParams<T>,
    unlabeled_images: &[&[f64]],
    hyper: &TrainHyper,
    tally: Tally<'_>,
) -> Result<PretrainOutcome<T>> {
    let shape = params.arch().input;
    if !shape.is_image() {
        return Err(Error::invalid("rotation pretraining needs image-shaped inputs"));
    }
    let rot_arch = params.arch().with_classes(4);
    let start = init_params(
        &rot_arch,
        rng::derive(hyper.seed, "rotation-head"),
        InitMode::FromPretrained(params),
    )?;
    let (inputs, labels) = rotation_dataset(unlabeled_images, shape)?;
    let rows: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let rotation = train(&start, &rows, &labels, hyper, tally)?;
    let last = rotation.layers.len() - 1;
    let mut layers = rotation.layers[..last].to_vec();
    layers.push(params.layers[last].clone());
    Ok(PretrainOutcome {
        params: ModelParams::new(params.arch().clone(), layers)?,
        rotation,
    })
}

/// Accuracy of a rotation classifier on the four rotations of `images`.
pub fn rotation_accuracy<T: Real>(rotation: &ModelParams<T>, images: &[&[f64]]) -> Result<f64> {
    let (inputs, labels) = rotation_dataset(images, rotation.arch().input)?;
    let samples: Vec<Sample> = inputs
        .into_iter()
        .zip(labels)
        .map(|(x, l)| Sample::labeled(x, l))
        .collect();
    Ok(evaluate(rotation, &samples, Tally::none())?.accuracy)
}
