use std::fmt::{Debug, Display};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

use super::arch::{ArchSpec, LayerOp, LayerSpec};
use super::counter::Tally;
use crate::error::{Error, Result};
use crate::rng;

/// Floating-point type the classifier runs in.
pub trait Real:
    LinalgScalar
    + ScalarOperand
    + Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
{
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn f64(self) -> f64 {
        self
    }
}

/// Weight is `outputs x fan_in`; conv weights flatten (in_channel, ky, kx).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    arch: ArchSpec,
    specs: Vec<LayerSpec>,
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Checks every tensor against the layer layout of `arch`.
    pub fn new(arch: ArchSpec, layers: Vec<LayerParams<T>>) -> Result<Self> {
        arch.validate()?;
        let specs = arch.layers()?;
        if specs.len() != layers.len() {
            return Err(Error::Shape(format!(
                "{} layers for an architecture with {}",
                layers.len(),
                specs.len()
            )));
        }
        for (s, l) in specs.iter().zip(&layers) {
            if l.weight.dim() != (s.outputs(), s.fan_in()) || l.bias.len() != s.outputs() {
                return Err(Error::Shape(format!(
                    "layer {}: weight {:?}, bias {} (expected ({}, {}), {})",
                    s.name,
                    l.weight.dim(),
                    l.bias.len(),
                    s.outputs(),
                    s.fan_in(),
                    s.outputs()
                )));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: s.name.to_string(),
                    what: "parameter",
                });
            }
        }
        Ok(ModelParams { arch, specs, layers })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn input_len(&self) -> usize {
        self.specs[0].input_len()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch.clone(),
            specs: self.specs.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: l.weight.mapv(|v| U::of(v.f64())),
                    bias: l.bias.mapv(|v| U::of(v.f64())),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Deterministic,
    /// Inverted dropout after every hidden fully-connected layer.
    Dropout {
        seed: u64,
    },
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    /// Dense layers: the layer input (B x fan_in).
    input: Option<Array2<T>>,
    /// Conv layers: im2col patches per sample (fan_in x H*W).
    cols: Option<Vec<Array2<T>>>,
    pre: Array2<T>,
    post: Option<Array2<T>>,
    argmax: Option<Vec<u32>>,
    mask: Option<Array2<T>>,
}

/// Forward pass results: per-layer caches, logits and softmax outputs.
#[derive(Debug, Clone)]
pub struct TappedActivations<T> {
    caches: Vec<LayerCache<T>>,
    tapped: Vec<usize>,
    pub logits: Array2<T>,
    pub probs: Array2<T>,
}

/// View of one tapped scale for a batch.
#[derive(Debug, Clone, Copy)]
pub struct ScaleView<'a, T> {
    pub name: &'static str,
    pub channels: usize,
    pub spatial: usize,
    /// Pre-activation, B x (C*H*W).
    pub pre: ArrayView2<'a, T>,
    /// Post-activation, B x (C*H*W).
    pub post: ArrayView2<'a, T>,
}

impl<T: Real> TappedActivations<T> {
    pub fn batch_size(&self) -> usize {
        self.logits.nrows()
    }

    pub fn num_scales(&self) -> usize {
        self.tapped.len()
    }

    pub fn scale<'a>(&'a self, params: &ModelParams<T>, j: usize) -> ScaleView<'a, T> {
        let li = self.tapped[j];
        let spec = &params.specs[li];
        let (h, w) = spec.out_spatial();
        let cache = &self.caches[li];
        ScaleView {
            name: spec.name,
            channels: spec.outputs(),
            spatial: h * w,
            pre: cache.pre.view(),
            post: cache.post.as_ref().unwrap_or(&cache.pre).view(),
        }
    }
}

/// Per-sample tapped gradients and, optionally, mean-loss parameter gradients.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: Option<Vec<LayerParams<T>>>,
    /// `tapped[j]` is B x (C*H*W): d L_i / d pre-activation of scale j for the
    /// per-sample loss L_i (not divided by the batch size).
    pub tapped: Vec<Array2<T>>,
}

pub fn softmax_rows<T: Real>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s: T = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Mean cross-entropy of `targets` under `logits`, in f64.
pub fn cross_entropy<T: Real>(logits: &Array2<T>, targets: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &t) in logits.rows().into_iter().zip(targets) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b.f64()));
        let lse = m + row.iter().map(|v| (v.f64() - m).exp()).sum::<f64>().ln();
        total += lse - row[t].f64();
    }
    total / targets.len().max(1) as f64
}

fn check_finite<T: Real>(a: &Array2<T>, layer: &str, what: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            layer: layer.to_string(),
            what,
        })
    }
}

fn im2col<T: Real>(x: ArrayView1<'_, T>, channels: usize, height: usize, width: usize, k: usize) -> Array2<T> {
    let (oh, ow) = (height + 1 - k, width + 1 - k);
    let mut cols = Array2::zeros((channels * k * k, oh * ow));
    let x = x.as_slice().expect("contiguous input row");
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let mut dst = cols.row_mut(r);
                let dst = dst.as_slice_mut().expect("contiguous");
                for oy in 0..oh {
                    let src = &x[c * height * width + (oy + ky) * width + kx..][..ow];
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(dcols: &Array2<T>, channels: usize, height: usize, width: usize, k: usize, out: &mut [T]) {
    let (oh, ow) = (height + 1 - k, width + 1 - k);
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let row = dcols.row(r);
                let src = row.as_slice().expect("contiguous");
                for oy in 0..oh {
                    let dst = &mut out[c * height * width + (oy + ky) * width + kx..][..ow];
                    for (d, s) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

fn maxpool<T: Real>(post: &Array2<T>, channels: usize, h: usize, w: usize) -> (Array2<T>, Vec<u32>) {
    let (ph, pw) = (h / 2, w / 2);
    let b = post.nrows();
    let mut out = Array2::zeros((b, channels * ph * pw));
    let mut arg = vec![0u32; b * channels * ph * pw];
    for (i, row) in post.rows().into_iter().enumerate() {
        let row = row.as_slice().expect("contiguous");
        let mut o = out.row_mut(i);
        let o = o.as_slice_mut().expect("contiguous");
        for c in 0..channels {
            for py in 0..ph {
                for px in 0..pw {
                    let mut best = c * h * w + (2 * py) * w + 2 * px;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = c * h * w + (2 * py + dy) * w + 2 * px + dx;
                        if row[idx] > row[best] {
                            best = idx;
                        }
                    }
                    let q = (c * ph + py) * pw + px;
                    o[q] = row[best];
                    arg[i * channels * ph * pw + q] = best as u32;
                }
            }
        }
    }
    (out, arg)
}

fn dropout_mask<T: Real>(rows: usize, cols: usize, rate: f64, seed: u64, layer: usize) -> Array2<T> {
    let keep = 1.0 - rate;
    let scale = T::of(1.0 / keep);
    let mut r = rng::rng(rng::mix(seed, layer as u64));
    Array2::from_shape_simple_fn(
        (rows, cols),
        || {
            if r.random::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        },
    )
}

/// Runs the classifier on a batch (`B x input_len`), keeping every tensor
/// needed for [`backward`]. Counts B forward passes.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    inputs: ArrayView2<'_, T>,
    mode: ForwardMode,
    tally: Tally<'_>,
) -> Result<TappedActivations<T>> {
    forward_impl(params, inputs, mode, None, tally)
}

/// Deterministic forward that adds `shift` (B x pre_len) to the
/// pre-activation of layer `layer` before its rectifier. Lets callers probe
/// the loss as a function of any intermediate tensor.
pub fn forward_shifted<T: Real>(
    params: &ModelParams<T>,
    inputs: ArrayView2<'_, T>,
    layer: usize,
    shift: ArrayView2<'_, T>,
    tally: Tally<'_>,
) -> Result<TappedActivations<T>> {
    let spec = params
        .specs
        .get(layer)
        .ok_or_else(|| Error::invalid(format!("no layer {layer}")))?;
    if shift.dim() != (inputs.nrows(), spec.pre_len()) {
        return Err(Error::Shape(format!(
            "shift {:?} for pre-activation ({}, {})",
            shift.dim(),
            inputs.nrows(),
            spec.pre_len()
        )));
    }
    forward_impl(params, inputs, ForwardMode::Deterministic, Some((layer, shift)), tally)
}

fn forward_impl<T: Real>(
    params: &ModelParams<T>,
    inputs: ArrayView2<'_, T>,
    mode: ForwardMode,
    shift: Option<(usize, ArrayView2<'_, T>)>,
    tally: Tally<'_>,
) -> Result<TappedActivations<T>> {
    if inputs.ncols() != params.input_len() {
        return Err(Error::Shape(format!(
            "input width {} for a model expecting {}",
            inputs.ncols(),
            params.input_len()
        )));
    }
    let b = inputs.nrows();
    let mut x = inputs.as_standard_layout().into_owned();
    let mut caches = Vec::with_capacity(params.specs.len());
    for (li, (spec, lp)) in params.specs.iter().zip(&params.layers).enumerate() {
        let (pre, cols, input) = match spec.op {
            LayerOp::Dense { .. } => {
                let mut pre = x.dot(&lp.weight.t());
                pre += &lp.bias;
                (pre, None, Some(x))
            }
            LayerOp::Conv {
                in_channels,
                out_channels,
                kernel,
                in_height,
                in_width,
            } => {
                let (oh, ow) = spec.out_spatial();
                let p = oh * ow;
                let mut pre = Array2::zeros((b, spec.pre_len()));
                let mut all = Vec::with_capacity(b);
                for i in 0..b {
                    let cols = im2col(x.row(i), in_channels, in_height, in_width, kernel);
                    let out = lp.weight.dot(&cols);
                    let mut row = pre.row_mut(i);
                    let row = row.as_slice_mut().expect("contiguous");
                    for c in 0..out_channels {
                        let bias = lp.bias[c];
                        for (d, s) in row[c * p..(c + 1) * p].iter_mut().zip(out.row(c)) {
                            *d = *s + bias;
                        }
                    }
                    all.push(cols);
                }
                (pre, Some(all), None)
            }
        };
        let mut pre = pre;
        if let Some((l, d)) = shift {
            if l == li {
                pre += &d;
            }
        }
        check_finite(&pre, spec.name, "pre-activation")?;
        let post = spec.relu.then(|| pre.mapv(|v| v.max(T::zero())));
        let (mut next, argmax) = match (&post, spec.maxpool) {
            (Some(post), true) => {
                let (h, w) = spec.out_spatial();
                let (pooled, arg) = maxpool(post, spec.outputs(), h, w);
                (pooled, Some(arg))
            }
            (Some(post), false) => (post.clone(), None),
            (None, _) => (pre.clone(), None),
        };
        let mask = match mode {
            ForwardMode::Dropout { seed } if spec.dropout && params.arch.dropout_rate > 0.0 => {
                let m = dropout_mask(b, next.ncols(), params.arch.dropout_rate, seed, li);
                next *= &m;
                Some(m)
            }
            _ => None,
        };
        caches.push(LayerCache {
            input,
            cols,
            pre,
            post,
            argmax,
            mask,
        });
        x = next;
    }
    let logits = x;
    let probs = softmax_rows(&logits);
    tally.forward(b);
    Ok(TappedActivations {
        caches,
        tapped: params.arch.tapped_layers()?,
        logits,
        probs,
    })
}

/// `probs - onehot(targets)`: the per-sample gradient of cross-entropy with
/// respect to the logits.
pub fn output_gradient<T: Real>(probs: &Array2<T>, targets: &[usize]) -> Result<Array2<T>> {
    if targets.len() != probs.nrows() {
        return Err(Error::Shape(format!(
            "{} targets for a batch of {}",
            targets.len(),
            probs.nrows()
        )));
    }
    let mut g = probs.clone();
    for (mut row, &t) in g.rows_mut().into_iter().zip(targets) {
        if t >= row.len() {
            return Err(Error::UnknownClass {
                class: t,
                num_classes: row.len(),
            });
        }
        row[t] -= T::one();
    }
    Ok(g)
}

/// Gradients of the mean cross-entropy over the batch plus per-sample tapped
/// gradients. Counts B backward passes.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    acts: &TappedActivations<T>,
    targets: &[usize],
    tally: Tally<'_>,
) -> Result<Gradients<T>> {
    let g = output_gradient(&acts.probs, targets)?;
    backward_from(params, acts, g, true, tally)
}

/// Backpropagates an arbitrary per-sample logit gradient. With
/// `param_grads = false` propagation stops at the lowest tapped layer.
pub fn backward_from<T: Real>(
    params: &ModelParams<T>,
    acts: &TappedActivations<T>,
    output_grad: Array2<T>,
    param_grads: bool,
    tally: Tally<'_>,
) -> Result<Gradients<T>> {
    let specs = &params.specs;
    let b = acts.batch_size();
    let lowest = if param_grads {
        0
    } else {
        acts.tapped.iter().copied().min().unwrap_or(0)
    };
    let mut tapped: Vec<Option<Array2<T>>> = vec![None; acts.tapped.len()];
    let mut grads: Vec<Option<LayerParams<T>>> = vec![None; specs.len()];
    let mut delta = output_grad;
    let inv_b = T::of(1.0 / b.max(1) as f64);

    for li in (lowest..specs.len()).rev() {
        let spec = &specs[li];
        let lp = &params.layers[li];
        let cache = &acts.caches[li];
        for (j, &t) in acts.tapped.iter().enumerate() {
            if t == li {
                tapped[j] = Some(delta.clone());
            }
        }
        if param_grads {
            let lg = match spec.op {
                LayerOp::Dense { .. } => {
                    let input = cache.input.as_ref().expect("dense cache");
                    LayerParams {
                        weight: delta.t().dot(input) * inv_b,
                        bias: delta.sum_axis(Axis(0)) * inv_b,
                    }
                }
                LayerOp::Conv { out_channels, .. } => {
                    let (oh, ow) = spec.out_spatial();
                    let p = oh * ow;
                    let cols = cache.cols.as_ref().expect("conv cache");
                    let mut dw = Array2::<T>::zeros(lp.weight.dim());
                    let mut db = Array1::<T>::zeros(out_channels);
                    for (i, c) in cols.iter().enumerate() {
                        let row = delta.row(i);
                        let d = ArrayView2::from_shape((out_channels, p), row.as_slice().expect("contiguous"))
                            .expect("shape");
                        ndarray::linalg::general_mat_mul(T::one(), &d, &c.t(), T::one(), &mut dw);
                        db += &d.sum_axis(Axis(1));
                    }
                    LayerParams {
                        weight: dw * inv_b,
                        bias: db * inv_b,
                    }
                }
            };
            grads[li] = Some(lg);
        }
        if li == lowest {
            break;
        }
        let dinput = match spec.op {
            LayerOp::Dense { .. } => delta.dot(&lp.weight),
            LayerOp::Conv {
                in_channels,
                out_channels,
                kernel,
                in_height,
                in_width,
            } => {
                let (oh, ow) = spec.out_spatial();
                let p = oh * ow;
                let mut dx = Array2::<T>::zeros((b, spec.input_len()));
                for i in 0..b {
                    let row = delta.row(i);
                    let d =
                        ArrayView2::from_shape((out_channels, p), row.as_slice().expect("contiguous")).expect("shape");
                    let dcols = lp.weight.t().dot(&d);
                    let mut out = dx.row_mut(i);
                    col2im(
                        &dcols,
                        in_channels,
                        in_height,
                        in_width,
                        kernel,
                        out.as_slice_mut().expect("contiguous"),
                    );
                }
                dx
            }
        };
        let prev_spec = &specs[li - 1];
        let prev = &acts.caches[li - 1];
        let mut d = dinput;
        if let Some(m) = &prev.mask {
            d *= m;
        }
        let d_post = if let Some(arg) = &prev.argmax {
            let width = prev.pre.ncols();
            let pooled = d.ncols();
            let mut up = Array2::<T>::zeros((b, width));
            for i in 0..b {
                let src = d.row(i);
                let mut dst = up.row_mut(i);
                for q in 0..pooled {
                    dst[arg[i * pooled + q] as usize] += src[q];
                }
            }
            up
        } else {
            d
        };
        delta = if prev_spec.relu {
            let mut dp = d_post;
            ndarray::Zip::from(&mut dp).and(&prev.pre).for_each(|g, &z| {
                if z <= T::zero() {
                    *g = T::zero();
                }
            });
            dp
        } else {
            d_post
        };
    }

    for (j, t) in tapped.iter().enumerate() {
        if let Some(t) = t {
            check_finite(t, specs[acts.tapped[j]].name, "tapped gradient")?;
        }
    }
    let params_out = if param_grads {
        let mut out = Vec::with_capacity(specs.len());
        for (li, g) in grads.into_iter().enumerate() {
            let g = g.expect("all layers visited");
            if g.weight.iter().chain(g.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: specs[li].name.to_string(),
                    what: "parameter gradient",
                });
            }
            out.push(g);
        }
        Some(out)
    } else {
        None
    };
    tally.backward(b);
    Ok(Gradients {
        params: params_out,
        tapped: tapped.into_iter().map(|t| t.expect("tapped layer visited")).collect(),
    })
}

/// Stacks input rows into a `B x len` batch in the model's precision.
pub fn batch<T: Real>(rows: &[&[f64]]) -> Array2<T> {
    let len = rows.first().map_or(0, |r| r.len());
    let mut out = Array2::zeros((rows.len(), len));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        for (d, s) in dst.iter_mut().zip(src.iter()) {
            *d = T::of(*s);
        }
    }
    out
}
