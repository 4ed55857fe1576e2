//! Pseudo-labels for unlabeled train points, used as the targets of their
//! Fisher scores: the masked true label (ablation), the predicted class,
//! two Monte-Carlo neighborhood metrics and nearest trusted validation match.

mod mc;
mod sampler;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

pub use mc::{
    covariance_blocks, log_det_spd, mc_mi_metric, mc_scores, mc_trace_metric, CovarianceBlocks, McSamples,
    DEFAULT_RIDGE,
};
pub use sampler::{rotate_bilinear, sample_neighborhood, Perturbation, SamplerSpec};

use crate::data::InputShape;
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::model::{batch, forward, ForwardMode, ModelParams, Real, Tally};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoMethod {
    /// The hidden true label; an upper-bound ablation.
    Oracle,
    Argmax,
    McTrace,
    McMi,
    TrustedMatch,
}

impl PseudoMethod {
    pub fn name(self) -> &'static str {
        match self {
            PseudoMethod::Oracle => "oracle",
            PseudoMethod::Argmax => "argmax",
            PseudoMethod::McTrace => "mc_trace",
            PseudoMethod::McMi => "mc_mi",
            PseudoMethod::TrustedMatch => "trusted_match",
        }
    }

    pub fn is_mc(self) -> bool {
        matches!(self, PseudoMethod::McTrace | PseudoMethod::McMi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelResult {
    pub label: usize,
    /// Per-class scores; the label is their argmax, ties to the lowest class.
    pub scores: Vec<f64>,
    pub method: PseudoMethod,
}

impl PseudoLabelResult {
    fn from_scores(scores: Vec<f64>, method: PseudoMethod) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("class scores"));
        }
        if scores.iter().any(|s| s.is_nan() || *s == f64::INFINITY) {
            return Err(Error::Numeric {
                layer: method.name().into(),
                what: "pseudo-label score",
            });
        }
        Ok(PseudoLabelResult {
            label: argmax_lowest(&scores),
            scores,
            method,
        })
    }
}

/// Index of the first maximum.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `S = p_hat`.
pub fn estimate_argmax(probs: &[f64]) -> Result<PseudoLabelResult> {
    PseudoLabelResult::from_scores(probs.to_vec(), PseudoMethod::Argmax)
}

/// One-hot scores on the hidden true label.
pub fn estimate_oracle(label: usize, num_classes: usize) -> Result<PseudoLabelResult> {
    if label >= num_classes {
        return Err(Error::UnknownClass {
            class: label,
            num_classes,
        });
    }
    let mut scores = vec![0.0; num_classes];
    scores[label] = 1.0;
    PseudoLabelResult::from_scores(scores, PseudoMethod::Oracle)
}

/// Scores each class by its best correlation with a labeled validation
/// descriptor: `S(d) = max` over validation points of class `d` of the
/// multi-scale similarity, `-inf` for classes without validation points.
pub fn trusted_match(
    descriptor: &[ArrayView1<'_, f64>],
    validation: &FeatureSet,
    labels: &[usize],
    num_classes: usize,
) -> Result<PseudoLabelResult> {
    if validation.is_empty() {
        return Err(Error::Empty("trusted validation set"));
    }
    if labels.len() != validation.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} validation descriptors",
            labels.len(),
            validation.len()
        )));
    }
    if descriptor.len() != validation.num_scales()
        || descriptor
            .iter()
            .zip(validation.scale_lengths())
            .any(|(d, l)| d.len() != l)
    {
        return Err(Error::Shape("descriptor layout differs from the validation set".into()));
    }
    let mut sims = ndarray::Array1::<f64>::zeros(validation.len());
    for (j, z) in descriptor.iter().enumerate() {
        sims += &validation.scale(j).t().dot(z);
    }
    let mut scores = vec![f64::NEG_INFINITY; num_classes];
    for (&s, &l) in sims.iter().zip(labels) {
        if l >= num_classes {
            return Err(Error::UnknownClass { class: l, num_classes });
        }
        if s > scores[l] {
            scores[l] = s;
        }
    }
    PseudoLabelResult::from_scores(scores, PseudoMethod::TrustedMatch)
}

/// What the estimators may need besides the sample itself.
#[derive(Debug, Clone, Copy)]
pub struct PseudoContext<'a> {
    pub true_label: Option<usize>,
    pub trusted: Option<(&'a FeatureSet, &'a [usize])>,
    pub sampler: Option<&'a SamplerSpec>,
    pub shape: InputShape,
    /// Stream id for the neighborhood sampler, usually the dataset index.
    pub stream: u64,
    pub ridge: f64,
}

impl<'a> PseudoContext<'a> {
    pub fn new(shape: InputShape) -> Self {
        PseudoContext {
            true_label: None,
            trusted: None,
            sampler: None,
            shape,
            stream: 0,
            ridge: DEFAULT_RIDGE,
        }
    }
}

/// Runs the chosen estimator on one input.
pub fn estimate<T: Real>(
    method: PseudoMethod,
    input: &[f64],
    params: &ModelParams<T>,
    ctx: &PseudoContext<'_>,
    tally: Tally<'_>,
) -> Result<PseudoLabelResult> {
    let missing = |what: &'static str| Error::MissingContext {
        method: method.name(),
        what,
    };
    match method {
        PseudoMethod::Oracle => estimate_oracle(
            ctx.true_label.ok_or_else(|| missing("true label"))?,
            params.num_classes(),
        ),
        PseudoMethod::Argmax => {
            let acts = forward(params, batch::<T>(&[input]).view(), ForwardMode::Deterministic, tally)?;
            let probs: Vec<f64> = acts.probs.row(0).iter().map(|v| v.f64()).collect();
            estimate_argmax(&probs)
        }
        PseudoMethod::TrustedMatch => {
            let (val, labels) = ctx.trusted.ok_or_else(|| missing("labeled validation descriptors"))?;
            let d = crate::features::extract_descriptors(params, &[input], &[0], tally)?;
            let cols: Vec<_> = (0..d.num_scales()).map(|j| d.column(j, 0)).collect();
            trusted_match(&cols, val, labels, params.num_classes())
        }
        PseudoMethod::McTrace | PseudoMethod::McMi => {
            let spec = ctx.sampler.ok_or_else(|| missing("neighborhood sampler"))?;
            let inputs = sample_neighborhood(input, ctx.shape, spec, ctx.stream)?;
            let samples = mc_scores(params, &inputs, tally)?;
            let scores = if method == PseudoMethod::McTrace {
                mc_trace_metric(&samples.z, &samples.g)?
            } else {
                mc_mi_metric(&samples.z, &samples.g, ctx.ridge)?
            };
            PseudoLabelResult::from_scores(scores, method)
        }
    }
}
