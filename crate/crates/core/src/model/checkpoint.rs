//! Checkpoints are directories: `manifest.json` plus one FMAT file per
//! weight and bias (biases stored as `1 x n`). Values are stored as f32.

use std::fs;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::arch::ArchSpec;
use super::network::{LayerParams, ModelParams, Real};
use crate::data::{read_matrix, write_matrix};
use crate::error::{Error, Result};

pub const CHECKPOINT_MANIFEST: &str = "manifest.json";
const FORMAT: &str = "fkal-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    arch: ArchSpec,
    layers: Vec<TensorFiles>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorFiles {
    name: String,
    weight: String,
    bias: String,
}

pub fn save_checkpoint<T: Real>(params: &ModelParams<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::new();
    for (spec, lp) in params.specs().iter().zip(&params.layers) {
        let files = TensorFiles {
            name: spec.name.to_string(),
            weight: format!("{}.weight.fmat", spec.name),
            bias: format!("{}.bias.fmat", spec.name),
        };
        write_matrix(dir.join(&files.weight), &lp.weight.mapv(|v| v.f64() as f32))?;
        let bias = lp.bias.mapv(|v| v.f64() as f32).insert_axis(ndarray::Axis(0));
        write_matrix(dir.join(&files.bias), &bias)?;
        layers.push(files);
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        arch: params.arch().clone(),
        layers,
    };
    let path = dir.join(CHECKPOINT_MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint<T: Real>(dir: impl AsRef<Path>) -> Result<ModelParams<T>> {
    let dir = dir.as_ref();
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            manifest.format,
            manifest.version
        )));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for files in &manifest.layers {
        let weight = read_matrix(dir.join(&files.weight))?.mapv(|v| T::of(f64::from(v)));
        let bias = read_matrix(dir.join(&files.bias))?;
        if bias.nrows() != 1 {
            return Err(Error::Shape(format!("{}: bias must be 1 x n", files.bias)));
        }
        let bias: Array1<T> = bias.row(0).mapv(|v| T::of(f64::from(v)));
        layers.push(LayerParams { weight, bias });
    }
    ModelParams::new(manifest.arch, layers)
}
