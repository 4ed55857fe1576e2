use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{apply_imbalance, load_mnist_split, make_synthetic_with, DatasetSplit, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{ArchKind, ArchSpec, TrainHyper, DEFAULT_DROPOUT};
use crate::selection::AcquisitionMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    /// The four standard MNIST IDX files in `dir`.
    Mnist {
        dir: PathBuf,
        train: usize,
        validation: usize,
        test: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    pub ratio: f64,
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub kind: ArchKind,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

fn default_dropout() -> f64 {
    DEFAULT_DROPOUT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// How many unlabeled train images feed the rotation task.
    pub images: usize,
    pub train: TrainHyper,
    /// Load the body from this checkpoint instead of training it.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitChoice {
    Pretrained,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

/// One experiment arm template; it runs once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    #[serde(default)]
    pub label: Option<String>,
    pub method: AcquisitionMethod,
    /// Defaults to `pretrained` when pretraining is enabled.
    #[serde(default)]
    pub init: Option<InitChoice>,
    /// Overrides the experiment's iteration count for this arm.
    #[serde(default)]
    pub iterations: Option<usize>,
}

impl MethodConfig {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.method.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub imbalance: Option<ImbalanceSpec>,
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainHyper,
    #[serde(default)]
    pub pretrain: Option<PretrainConfig>,
    pub methods: Vec<MethodConfig>,
    pub iterations: usize,
    pub pool_size: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default = "one")]
    pub jobs: usize,
    /// Classes averaged into the rare-class accuracy column; defaults to the
    /// imbalanced classes.
    #[serde(default)]
    pub rare_classes: Option<Vec<usize>>,
    /// Wall-clock column; turn off for byte-identical reports.
    #[serde(default = "yes")]
    pub record_wall_time: bool,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/experiment")
}

fn default_precision() -> Precision {
    Precision::F32
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    /// Reads a JSON config; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSpec::Mnist { dir, .. } = &mut self.dataset {
            fix(dir);
        }
        fix(&mut self.output_dir);
        if let Some(PretrainConfig {
            checkpoint: Some(c), ..
        }) = &mut self.pretrain
        {
            fix(c);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations == 0 || self.pool_size == 0 {
            return bad("iterations and pool_size must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be positive".into());
        }
        self.train.validate()?;
        let mut labels = std::collections::BTreeSet::new();
        for m in &self.methods {
            m.method.validate()?;
            if !labels.insert(m.label()) {
                return bad(format!("duplicate method label {}", m.label()));
            }
            if m.iterations == Some(0) {
                return bad(format!("{}: iterations must be positive", m.label()));
            }
            if m.init == Some(InitChoice::Pretrained) && !self.pretraining_enabled() {
                return bad(format!("{}: pretrained init without pretraining", m.label()));
            }
        }
        if let Some(p) = &self.pretrain {
            p.train.validate()?;
        }
        if let Some(i) = &self.imbalance {
            if !(i.ratio >= 1.0) {
                return bad("imbalance ratio must be >= 1".into());
            }
        }
        Ok(())
    }

    pub fn pretraining_enabled(&self) -> bool {
        self.pretrain.as_ref().is_some_and(|p| p.enabled)
    }

    pub fn init_for(&self, m: &MethodConfig) -> InitChoice {
        m.init.unwrap_or(if self.pretraining_enabled() {
            InitChoice::Pretrained
        } else {
            InitChoice::Random
        })
    }

    pub fn iterations_for(&self, m: &MethodConfig) -> usize {
        m.iterations.unwrap_or(self.iterations)
    }

    /// Split before class decimation. Synthetic data depends on the seed;
    /// MNIST does not.
    pub fn base_split(&self, seed: u64) -> Result<DatasetSplit> {
        match &self.dataset {
            DatasetSpec::Synthetic(spec) => make_synthetic_with(spec, seed),
            DatasetSpec::Mnist {
                dir,
                train,
                validation,
                test,
            } => load_mnist_split(dir, *train, *validation, *test),
        }
    }

    /// The split one seed works on, after decimation. Checks the labeling
    /// budget fits the pool.
    pub fn split_for(&self, base: &DatasetSplit, seed: u64) -> Result<DatasetSplit> {
        let split = match &self.imbalance {
            Some(i) => apply_imbalance(base, i.ratio, &i.classes, seed)?,
            None => base.clone(),
        };
        let max_iter = self.methods.iter().map(|m| self.iterations_for(m)).max().unwrap_or(0);
        if max_iter * self.pool_size > split.train.len() {
            return Err(Error::Config(format!(
                "budget {} x {} exceeds a train pool of {}",
                max_iter,
                self.pool_size,
                split.train.len()
            )));
        }
        Ok(split)
    }

    pub fn arch_for(&self, split: &DatasetSplit) -> Result<ArchSpec> {
        Ok(ArchSpec::for_input(self.arch.kind, split.shape, split.num_classes)?.with_dropout(self.arch.dropout_rate))
    }

    pub fn rare(&self) -> Vec<usize> {
        self.rare_classes
            .clone()
            .or_else(|| self.imbalance.as_ref().map(|i| i.classes.clone()))
            .unwrap_or_default()
    }
}
