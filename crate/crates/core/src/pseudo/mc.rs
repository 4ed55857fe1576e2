use nalgebra::DMatrix;
use ndarray::{concatenate, s, Array2, Axis};

use crate::error::{Error, Result};
use crate::features::{pool_activations, pool_gradients};
use crate::model::{backward_from, batch, forward, output_gradient, ForwardMode, ModelParams, Real, Tally, CHUNK};

/// Ridge added to each covariance block, relative to its mean diagonal.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Raw (unstandardized) pooled samples over a neighborhood: `z` is `L x K`
/// with all scales stacked, `g[d]` the class-`d` Fisher scores, same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct McSamples {
    pub z: Array2<f64>,
    pub g: Vec<Array2<f64>>,
}

fn stack(parts: Vec<Array2<f64>>) -> Result<Array2<f64>> {
    let views: Vec<_> = parts.iter().map(|m| m.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

fn hstack(parts: Vec<Array2<f64>>) -> Result<Array2<f64>> {
    let views: Vec<_> = parts.iter().map(|m| m.view()).collect();
    concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Descriptors and per-class Fisher scores for each perturbed input: one
/// forward per input and one backward per (input, class).
pub fn mc_scores<T: Real>(params: &ModelParams<T>, inputs: &[Vec<f64>], tally: Tally<'_>) -> Result<McSamples> {
    if inputs.is_empty() {
        return Err(Error::Empty("neighborhood samples"));
    }
    let d = params.num_classes();
    let mut z_parts = Vec::new();
    let mut g_parts: Vec<Vec<Array2<f64>>> = vec![Vec::new(); d];
    for chunk in inputs.chunks(CHUNK) {
        let rows: Vec<&[f64]> = chunk.iter().map(Vec::as_slice).collect();
        let acts = forward(params, batch::<T>(&rows).view(), ForwardMode::Deterministic, tally)?;
        z_parts.push(stack(pool_activations(params, &acts))?);
        for (class, parts) in g_parts.iter_mut().enumerate() {
            let targets = vec![class; chunk.len()];
            let grads = backward_from(params, &acts, output_gradient(&acts.probs, &targets)?, false, tally)?;
            parts.push(stack(pool_gradients(params, &acts, &grads))?);
        }
    }
    Ok(McSamples {
        z: hstack(z_parts)?,
        g: g_parts.into_iter().map(hstack).collect::<Result<_>>()?,
    })
}

fn centered(m: &Array2<f64>) -> Array2<f64> {
    let mean = m.mean_axis(Axis(1)).expect("non-empty");
    m - &mean.insert_axis(Axis(1))
}

fn check_samples(z: &Array2<f64>, g: &Array2<f64>) -> Result<()> {
    if z.ncols() < 2 {
        return Err(Error::invalid("covariance needs K >= 2 samples"));
    }
    if z.dim() != g.dim() {
        return Err(Error::Shape(format!("z {:?} vs g {:?}", z.dim(), g.dim())));
    }
    Ok(())
}

/// `S(d) = trace(C_{z,g(d)})` with the unbiased covariance.
pub fn mc_trace_metric(z: &Array2<f64>, g: &[Array2<f64>]) -> Result<Vec<f64>> {
    let zc = centered(z);
    g.iter()
        .map(|gd| {
            check_samples(z, gd)?;
            let gc = centered(gd);
            Ok((&zc * &gc).sum() / (z.ncols() - 1) as f64)
        })
        .collect()
}

/// Sample covariances of `z` and `g`, each diagonal block ridged by
/// `ridge * mean(diag)` (or `ridge` itself for an all-zero block).
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBlocks {
    pub zz: Array2<f64>,
    pub gg: Array2<f64>,
    pub zg: Array2<f64>,
    pub joint: Array2<f64>,
    pub k: usize,
    pub ridge: f64,
}

fn add_ridge(m: &mut Array2<f64>, ridge: f64) {
    let n = m.nrows();
    let mean = m.diag().sum() / n as f64;
    let r = if mean > 0.0 { ridge * mean } else { ridge };
    m.diag_mut().iter_mut().for_each(|v| *v += r);
}

pub fn covariance_blocks(z: &Array2<f64>, g: &Array2<f64>, ridge: f64) -> Result<CovarianceBlocks> {
    check_samples(z, g)?;
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be >= 0"));
    }
    let k = z.ncols();
    let l = z.nrows();
    let zc = centered(z);
    let gc = centered(g);
    let n = (k - 1) as f64;
    let mut zz = zc.dot(&zc.t()) / n;
    let mut gg = gc.dot(&gc.t()) / n;
    let zg = zc.dot(&gc.t()) / n;
    add_ridge(&mut zz, ridge);
    add_ridge(&mut gg, ridge);
    let mut joint = Array2::zeros((2 * l, 2 * l));
    joint.slice_mut(s![..l, ..l]).assign(&zz);
    joint.slice_mut(s![l.., l..]).assign(&gg);
    joint.slice_mut(s![..l, l..]).assign(&zg);
    joint.slice_mut(s![l.., ..l]).assign(&zg.t());
    Ok(CovarianceBlocks {
        zz,
        gg,
        zg,
        joint,
        k,
        ridge,
    })
}

/// `log det` of a symmetric positive-definite matrix via Cholesky.
pub fn log_det_spd(m: &Array2<f64>) -> Result<f64> {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |r, c| m[[r, c]]);
    let chol = dm.cholesky().ok_or(Error::Numeric {
        layer: "covariance".into(),
        what: "non positive-definite block",
    })?;
    let ld = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if ld.is_finite() {
        Ok(ld)
    } else {
        Err(Error::Numeric {
            layer: "covariance".into(),
            what: "determinant",
        })
    }
}

/// Gaussian mutual information in nats,
/// `S(d) = (log|C_zz| + log|C_gg| - log|C_joint|) / 2`.
pub fn mc_mi_metric(z: &Array2<f64>, g: &[Array2<f64>], ridge: f64) -> Result<Vec<f64>> {
    g.iter()
        .map(|gd| {
            let b = covariance_blocks(z, gd, ridge)?;
            Ok(0.5 * (log_det_spd(&b.zz)? + log_det_spd(&b.gg)? - log_det_spd(&b.joint)?))
        })
        .collect()
}
