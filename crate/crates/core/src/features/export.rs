use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FeatureSet;
use crate::data::{read_matrix, write_matrix};
use crate::error::{Error, Result};

pub const FEATURE_MANIFEST: &str = "features.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    scales: Vec<ScaleEntry>,
    index: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScaleEntry {
    name: String,
    length: usize,
    file: String,
}

/// Writes one FMAT file per scale (`L_j x count`, f32) and a JSON manifest
/// with the scale names and the column index map.
pub fn write_feature_set(set: &FeatureSet, dir: impl AsRef<Path>, prefix: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut scales = Vec::new();
    for (name, m) in set.names().iter().zip(set.scales()) {
        let file = format!("{prefix}_{name}.fmat");
        write_matrix(dir.join(&file), &m.mapv(|v| v as f32))?;
        scales.push(ScaleEntry {
            name: name.clone(),
            length: m.nrows(),
            file,
        });
    }
    let manifest = Manifest {
        scales,
        index: set.index().to_vec(),
    };
    let path = dir.join(format!("{prefix}_{FEATURE_MANIFEST}"));
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn read_feature_set(dir: impl AsRef<Path>, prefix: &str) -> Result<FeatureSet> {
    let dir = dir.as_ref();
    let path = dir.join(format!("{prefix}_{FEATURE_MANIFEST}"));
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes)?;
    let mut names = Vec::new();
    let mut scales = Vec::new();
    for entry in manifest.scales {
        let m = read_matrix(dir.join(&entry.file))?;
        if m.nrows() != entry.length {
            return Err(Error::Shape(format!(
                "{}: {} rows, manifest says {}",
                entry.file,
                m.nrows(),
                entry.length
            )));
        }
        scales.push(m.mapv(f64::from));
        names.push(entry.name);
    }
    FeatureSet::new(names, scales, manifest.index)
}
