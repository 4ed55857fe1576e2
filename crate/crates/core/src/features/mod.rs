//! Pooled multi-scale descriptors `z` and Fisher scores `g` taken from the
//! tapped layers of the classifier, stored as per-scale `L_j x count`
//! matrices that share one column index map.

mod export;

use ndarray::{Array1, Array2, ArrayView1, Axis};

pub use export::{read_feature_set, write_feature_set, FEATURE_MANIFEST};

use crate::error::{Error, Result};
use crate::model::{
    backward_from, batch, forward, output_gradient, ForwardMode, Gradients, ModelParams, Real, Tally,
    TappedActivations, CHUNK,
};

/// Per-scale matrices (`L_j x count`) plus the dataset index of each column.
/// Used for both descriptors and Fisher scores.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    names: Vec<String>,
    scales: Vec<Array2<f64>>,
    index: Vec<usize>,
}

pub type DescriptorSet = FeatureSet;
pub type ScoreSet = FeatureSet;

impl FeatureSet {
    pub fn new(names: Vec<String>, scales: Vec<Array2<f64>>, index: Vec<usize>) -> Result<Self> {
        if names.len() != scales.len() || scales.is_empty() {
            return Err(Error::Shape(format!(
                "{} scale names for {} matrices",
                names.len(),
                scales.len()
            )));
        }
        if let Some(m) = scales.iter().find(|m| m.ncols() != index.len()) {
            return Err(Error::Shape(format!(
                "scale with {} columns but {} indices",
                m.ncols(),
                index.len()
            )));
        }
        Ok(FeatureSet { names, scales, index })
    }

    /// Empty set with the scale layout of `params`.
    pub fn empty<T: Real>(params: &ModelParams<T>) -> Result<Self> {
        let (names, lens) = layout(params)?;
        let scales = lens.iter().map(|&l| Array2::zeros((l, 0))).collect();
        FeatureSet::new(names, scales, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn scale(&self, j: usize) -> &Array2<f64> {
        &self.scales[j]
    }

    pub fn scales(&self) -> &[Array2<f64>] {
        &self.scales
    }

    pub fn scale_lengths(&self) -> Vec<usize> {
        self.scales.iter().map(|m| m.nrows()).collect()
    }

    /// Dataset index of every column.
    pub fn index(&self) -> &[usize] {
        &self.index
    }

    pub fn column(&self, j: usize, col: usize) -> ArrayView1<'_, f64> {
        self.scales[j].column(col)
    }

    /// All scales of one column stacked into a single vector.
    pub fn concat_column(&self, col: usize) -> Vec<f64> {
        self.scales.iter().flat_map(|m| m.column(col).to_vec()).collect()
    }

    /// Keeps the columns at `positions`, in that order.
    pub fn select(&self, positions: &[usize]) -> Result<Self> {
        if let Some(&p) = positions.iter().find(|&&p| p >= self.len()) {
            return Err(Error::invalid(format!(
                "column {p} out of range for a set of {}",
                self.len()
            )));
        }
        Ok(FeatureSet {
            names: self.names.clone(),
            scales: self.scales.iter().map(|m| m.select(Axis(1), positions)).collect(),
            index: positions.iter().map(|&p| self.index[p]).collect(),
        })
    }

    pub fn same_layout(&self, other: &FeatureSet) -> bool {
        self.names == other.names && self.scale_lengths() == other.scale_lengths()
    }
}

fn layout<T: Real>(params: &ModelParams<T>) -> Result<(Vec<String>, Vec<usize>)> {
    let tapped = params.arch().tapped_layers()?;
    let specs = params.specs();
    Ok((
        tapped.iter().map(|&l| specs[l].name.to_string()).collect(),
        tapped.iter().map(|&l| specs[l].outputs()).collect(),
    ))
}

/// Spatial average of a `C x (H*W)` tensor flattened channel-major.
/// Flat vectors (`spatial = 1`) pass through unchanged.
pub fn pool(tensor: ArrayView1<'_, f64>, channels: usize, spatial: usize) -> Result<Array1<f64>> {
    if spatial == 0 || channels == 0 {
        return Err(Error::Shape("cannot pool a tensor with an empty dimension".into()));
    }
    if tensor.len() != channels * spatial {
        return Err(Error::Shape(format!(
            "tensor of {} values is not {channels} x {spatial}",
            tensor.len()
        )));
    }
    if tensor.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            layer: "pool".into(),
            what: "tensor",
        });
    }
    Ok(Array1::from_shape_fn(channels, |c| {
        tensor.slice(ndarray::s![c * spatial..(c + 1) * spatial]).sum() / spatial as f64
    }))
}

/// Centers a vector on its own mean and scales it to unit l2 norm.
/// Constant vectors become zero.
pub fn standardize(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // Relative threshold: centering a constant vector leaves rounding noise.
    let scale = v.len() as f64 * f64::EPSILON * mean.abs().max(f64::MIN_POSITIVE);
    if norm <= scale || norm == 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn pool_batch<T: Real>(tensor: ndarray::ArrayView2<'_, T>, channels: usize, spatial: usize) -> Array2<f64> {
    let b = tensor.nrows();
    let inv = 1.0 / spatial as f64;
    Array2::from_shape_fn((channels, b), |(c, i)| {
        let row = tensor.row(i);
        (0..spatial).map(|q| row[c * spatial + q].f64()).sum::<f64>() * inv
    })
}

/// Raw pooled post-activations per scale, `L_j x B`.
pub fn pool_activations<T: Real>(params: &ModelParams<T>, acts: &TappedActivations<T>) -> Vec<Array2<f64>> {
    (0..acts.num_scales())
        .map(|j| {
            let v = acts.scale(params, j);
            pool_batch(v.post, v.channels, v.spatial)
        })
        .collect()
}

/// Raw pooled pre-activation gradients per scale, `L_j x B`.
pub fn pool_gradients<T: Real>(
    params: &ModelParams<T>,
    acts: &TappedActivations<T>,
    grads: &Gradients<T>,
) -> Vec<Array2<f64>> {
    (0..acts.num_scales())
        .map(|j| {
            let v = acts.scale(params, j);
            pool_batch(grads.tapped[j].view(), v.channels, v.spatial)
        })
        .collect()
}

fn standardize_columns(m: &mut Array2<f64>) {
    for mut col in m.columns_mut() {
        let mut v = col.to_vec();
        standardize(&mut v);
        col.assign(&ArrayView1::from(&v));
    }
}

fn check_index(n: usize, index: &[usize]) -> Result<()> {
    if n != index.len() {
        return Err(Error::Shape(format!("{n} samples but {} indices", index.len())));
    }
    Ok(())
}

struct Builder {
    names: Vec<String>,
    parts: Vec<Vec<Array2<f64>>>,
}

impl Builder {
    fn new<T: Real>(params: &ModelParams<T>) -> Result<Self> {
        let (names, _) = layout(params)?;
        let parts = vec![Vec::new(); names.len()];
        Ok(Builder { names, parts })
    }

    fn push(&mut self, mats: Vec<Array2<f64>>) {
        for (j, m) in mats.into_iter().enumerate() {
            self.parts[j].push(m);
        }
    }

    fn finish(self, index: Vec<usize>, lens: &[usize]) -> Result<FeatureSet> {
        let scales = self
            .parts
            .into_iter()
            .zip(lens)
            .map(|(p, &l)| {
                if p.is_empty() {
                    Ok(Array2::zeros((l, 0)))
                } else {
                    let views: Vec<_> = p.iter().map(|m| m.view()).collect();
                    ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))
                }
            })
            .collect::<Result<_>>()?;
        FeatureSet::new(self.names, scales, index)
    }
}

/// Standardized descriptors from one deterministic forward per sample.
pub fn extract_descriptors<T: Real>(
    params: &ModelParams<T>,
    inputs: &[&[f64]],
    index: &[usize],
    tally: Tally<'_>,
) -> Result<DescriptorSet> {
    Ok(extract_descriptors_with_probs(params, inputs, index, tally)?.0)
}

/// [`extract_descriptors`] that also returns the softmax outputs
/// (`count x D`) of the same forward passes.
pub fn extract_descriptors_with_probs<T: Real>(
    params: &ModelParams<T>,
    inputs: &[&[f64]],
    index: &[usize],
    tally: Tally<'_>,
) -> Result<(DescriptorSet, Array2<f64>)> {
    check_index(inputs.len(), index)?;
    let mut out = Builder::new(params)?;
    let mut probs = Array2::zeros((inputs.len(), params.num_classes()));
    for (c, chunk) in inputs.chunks(CHUNK).enumerate() {
        let acts = forward(params, batch::<T>(chunk).view(), ForwardMode::Deterministic, tally)?;
        let mut z = pool_activations(params, &acts);
        z.iter_mut().for_each(standardize_columns);
        out.push(z);
        probs
            .slice_mut(ndarray::s![c * CHUNK..c * CHUNK + chunk.len(), ..])
            .assign(&acts.probs.mapv(|v| v.f64()));
    }
    Ok((out.finish(index.to_vec(), &params.arch().scale_lengths()?)?, probs))
}

/// Standardized Fisher scores for the given targets. Runs its own forward,
/// so each sample costs one forward and one backward.
pub fn extract_scores<T: Real>(
    params: &ModelParams<T>,
    inputs: &[&[f64]],
    targets: &[usize],
    index: &[usize],
    tally: Tally<'_>,
) -> Result<ScoreSet> {
    check_index(inputs.len(), index)?;
    if targets.len() != inputs.len() {
        return Err(Error::Shape(format!(
            "{} targets for {} samples",
            targets.len(),
            inputs.len()
        )));
    }
    let (_, scores, _) = extract_joint(params, inputs, index, |pos, _, _| Ok(targets[pos]), tally)?;
    Ok(scores)
}

/// Descriptors and Fisher scores sharing one forward per sample. After the
/// forward, `label(position, standardized descriptor per scale, softmax)`
/// picks the target whose loss is backpropagated.
pub fn extract_joint<T, F>(
    params: &ModelParams<T>,
    inputs: &[&[f64]],
    index: &[usize],
    mut label: F,
    tally: Tally<'_>,
) -> Result<(DescriptorSet, ScoreSet, Vec<usize>)>
where
    T: Real,
    F: FnMut(usize, &[ArrayView1<'_, f64>], ArrayView1<'_, f64>) -> Result<usize>,
{
    check_index(inputs.len(), index)?;
    let lens = params.arch().scale_lengths()?;
    let mut zs = Builder::new(params)?;
    let mut gs = Builder::new(params)?;
    let mut targets = Vec::with_capacity(inputs.len());
    for (c, chunk) in inputs.chunks(CHUNK).enumerate() {
        let acts = forward(params, batch::<T>(chunk).view(), ForwardMode::Deterministic, tally)?;
        let mut z = pool_activations(params, &acts);
        z.iter_mut().for_each(standardize_columns);
        let probs = acts.probs.mapv(|v| v.f64());
        let mut chunk_targets = Vec::with_capacity(chunk.len());
        for i in 0..chunk.len() {
            let cols: Vec<ArrayView1<'_, f64>> = z.iter().map(|m| m.column(i)).collect();
            chunk_targets.push(label(c * CHUNK + i, &cols, probs.row(i))?);
        }
        let grads = backward_from(
            params,
            &acts,
            output_gradient(&acts.probs, &chunk_targets)?,
            false,
            tally,
        )?;
        let mut g = pool_gradients(params, &acts, &grads);
        g.iter_mut().for_each(standardize_columns);
        gs.push(g);
        zs.push(z);
        targets.extend(chunk_targets);
    }
    Ok((
        zs.finish(index.to_vec(), &lens)?,
        gs.finish(index.to_vec(), &lens)?,
        targets,
    ))
}
