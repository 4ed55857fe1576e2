//! Similarity matrices between validation and train points: the multi-scale
//! PCC kernel over standardized descriptors and the practical Fisher kernel
//! that multiplies descriptor and score similarities within each scale.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::write_matrix;
use crate::error::{Error, Result};
use crate::features::FeatureSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Pcc,
    Gradient,
    Pfk,
}

/// Rows are validation points, columns unlabeled train points.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: Array2<f64>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    kind: KernelKind,
}

impl KernelMatrix {
    pub fn new(values: Array2<f64>, rows: Vec<usize>, cols: Vec<usize>, kind: KernelKind) -> Result<Self> {
        if values.dim() != (rows.len(), cols.len()) {
            return Err(Error::Shape(format!(
                "kernel {:?} with {} row and {} column indices",
                values.dim(),
                rows.len(),
                cols.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                layer: "kernel".into(),
                what: "entry",
            });
        }
        Ok(KernelMatrix {
            values,
            rows,
            cols,
            kind,
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    /// Dataset index of every row.
    pub fn row_index(&self) -> &[usize] {
        &self.rows
    }

    /// Dataset index of every column.
    pub fn col_index(&self) -> &[usize] {
        &self.cols
    }

    pub fn write_fmat(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix(path, &self.values.mapv(|v| v as f32))
    }
}

fn check_layout(a: &FeatureSet, b: &FeatureSet) -> Result<()> {
    if a.scale_lengths() != b.scale_lengths() {
        return Err(Error::Shape(format!(
            "scale layouts differ: {:?} vs {:?}",
            a.scale_lengths(),
            b.scale_lengths()
        )));
    }
    Ok(())
}

fn similarity_sum(a: &FeatureSet, b: &FeatureSet) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (x, y) in a.scales().iter().zip(b.scales()) {
        out += &x.t().dot(y);
    }
    out
}

/// `sum_j (A^j)^T B^j` over standardized descriptors.
pub fn pcc_kernel(a: &FeatureSet, b: &FeatureSet) -> Result<KernelMatrix> {
    check_layout(a, b)?;
    KernelMatrix::new(
        similarity_sum(a, b),
        a.index().to_vec(),
        b.index().to_vec(),
        KernelKind::Pcc,
    )
}

/// Same form as [`pcc_kernel`] over standardized Fisher scores.
pub fn gradient_kernel(a: &FeatureSet, b: &FeatureSet) -> Result<KernelMatrix> {
    check_layout(a, b)?;
    KernelMatrix::new(
        similarity_sum(a, b),
        a.index().to_vec(),
        b.index().to_vec(),
        KernelKind::Gradient,
    )
}

/// `sum_j ((Zv^j)^T Z^j) o ((Gv^j)^T G^j)`: Hadamard product within each
/// scale, then summed over scales.
pub fn pfk(zv: &FeatureSet, gv: &FeatureSet, z: &FeatureSet, g: &FeatureSet) -> Result<KernelMatrix> {
    check_layout(zv, z)?;
    check_layout(zv, gv)?;
    check_layout(z, g)?;
    if zv.index() != gv.index() || z.index() != g.index() {
        return Err(Error::Shape("descriptor and score column maps differ".into()));
    }
    let mut out = Array2::zeros((zv.len(), z.len()));
    for j in 0..zv.num_scales() {
        let rz = zv.scale(j).t().dot(z.scale(j));
        let rg = gv.scale(j).t().dot(g.scale(j));
        out += &(rz * rg);
    }
    KernelMatrix::new(out, zv.index().to_vec(), z.index().to_vec(), KernelKind::Pfk)
}

/// Inner product of the explicit per-point Fisher scores
/// `vec(g_m z_m^T) . vec(g_n z_n^T)`, materializing both outer products.
pub fn pfk_naive(z_m: &[f64], g_m: &[f64], z_n: &[f64], g_n: &[f64]) -> Result<f64> {
    let l = z_m.len();
    if [g_m.len(), z_n.len(), g_n.len()].iter().any(|&x| x != l) {
        return Err(Error::Shape("pfk_naive needs four vectors of one length".into()));
    }
    let outer = |g: &[f64], z: &[f64]| Array2::from_shape_fn((l, l), |(r, c)| g[r] * z[c]);
    let a = outer(g_m, z_m);
    let b = outer(g_n, z_n);
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum())
}

/// A categorical distribution `softmax(theta)` and a parameter step `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalModel {
    pub theta: Vec<f64>,
    pub delta: Vec<f64>,
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

/// Fisher information of the logits: `diag(p) - p p^T`.
pub fn categorical_fisher(theta: &[f64]) -> Array2<f64> {
    let p: Array1<f64> = log_softmax(theta).into_iter().map(f64::exp).collect();
    let mut f = Array2::from_diag(&p);
    for r in 0..p.len() {
        for c in 0..p.len() {
            f[[r, c]] -= p[r] * p[c];
        }
    }
    f
}

impl CategoricalModel {
    /// `(KL(softmax(theta + delta) || softmax(theta)), delta^T I delta / 2)`.
    pub fn kl_quadratic_check(&self) -> (f64, f64) {
        let moved: Vec<f64> = self.theta.iter().zip(&self.delta).map(|(t, d)| t + d).collect();
        let lq = log_softmax(&moved);
        let lp = log_softmax(&self.theta);
        let kl = lq.iter().zip(&lp).map(|(a, b)| a.exp() * (a - b)).sum::<f64>().max(0.0);
        let d = Array1::from(self.delta.clone());
        let quad = 0.5 * d.dot(&categorical_fisher(&self.theta).dot(&d));
        (kl, quad)
    }
}

pub fn kl_quadratic_check(model: &CategoricalModel) -> (f64, f64) {
    model.kl_quadratic_check()
}
