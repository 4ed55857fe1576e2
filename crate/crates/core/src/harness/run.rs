use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, InitChoice, MethodConfig, Precision};
use super::report::{aggregate, write_summary, ReportRow};
use crate::data::{DatasetSplit, Oracle};
use crate::error::{Error, Result};
use crate::model::{
    argmax, init_params, load_checkpoint, predict, pretrain_rotations, rotation_accuracy, train, Evaluation, InitMode,
    ModelParams, PassCounter, Passes, Phase, Real, Tally,
};
use crate::rng;
use crate::selection::{acquire, AcquisitionContext, AcquisitionRecord, PoolState};

pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PER_CLASS_FILE: &str = "per_class.csv";
pub const SELECTIONS_FILE: &str = "selections.jsonl";
pub const ABORTED_FILE: &str = "aborted.csv";
pub const PRETRAIN_FILE: &str = "pretrain.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const CONFUSION_DIR: &str = "confusion";

/// Everything one experiment produced, in deterministic order.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub rows: Vec<ReportRow>,
    pub per_class: Vec<PerClassRow>,
    pub selections: Vec<SelectionLine>,
    pub confusion: Vec<ConfusionMatrix>,
    pub aborted: Vec<AbortedArm>,
    pub pretrain: Vec<PretrainRow>,
}

impl RunOutcome {
    pub fn rows_for(&self, method: &str) -> impl Iterator<Item = &ReportRow> {
        let method = method.to_string();
        self.rows.iter().filter(move |r| r.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerClassRow {
    pub method: String,
    pub seed: u64,
    pub iteration: usize,
    pub class: usize,
    /// Empty when the test set has no sample of the class.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionLine {
    pub method: String,
    pub seed: u64,
    #[serde(flatten)]
    pub record: AcquisitionRecord,
    pub training: Passes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub method: String,
    pub seed: u64,
    pub iteration: usize,
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbortedArm {
    pub method: String,
    pub seed: u64,
    /// The iteration that failed; 0 when setup failed.
    pub iteration: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainRow {
    pub seed: u64,
    pub images: usize,
    /// Rotation accuracy on the validation images; empty when the body came
    /// from a checkpoint.
    pub rotation_acc: Option<f64>,
}

#[derive(Debug, Default)]
struct ArmOutput {
    rows: Vec<ReportRow>,
    per_class: Vec<PerClassRow>,
    selections: Vec<SelectionLine>,
    confusion: Option<ConfusionMatrix>,
    aborted: Option<AbortedArm>,
}

struct SeedSetup<T> {
    seed: u64,
    split: DatasetSplit,
    random: ModelParams<T>,
    pretrained: Option<ModelParams<T>>,
    pretrain: Option<PretrainRow>,
}

/// Runs every (method, seed) arm, writes all artifacts under the output
/// directory and returns them. Arm failures are recorded in `aborted`; the
/// caller decides whether they fail the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg),
        Precision::F64 => run_typed::<f64>(cfg),
    })?;
    write_outcome(cfg, &outcome)?;
    Ok(outcome)
}

fn run_typed<T: Real>(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let setups: Vec<SeedSetup<T>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| prepare_seed(cfg, seed))
        .collect::<Result<_>>()?;
    let arms: Vec<(&SeedSetup<T>, &MethodConfig)> = cfg
        .methods
        .iter()
        .flat_map(|m| setups.iter().map(move |s| (s, m)))
        .collect();
    let outputs: Vec<ArmOutput> = arms.par_iter().map(|(s, m)| run_arm(cfg, s, m)).collect();

    let mut out = RunOutcome {
        output_dir: cfg.output_dir.clone(),
        ..RunOutcome::default()
    };
    out.pretrain = setups.iter().filter_map(|s| s.pretrain.clone()).collect();
    for o in outputs {
        out.rows.extend(o.rows);
        out.per_class.extend(o.per_class);
        out.selections.extend(o.selections);
        out.confusion.extend(o.confusion);
        out.aborted.extend(o.aborted);
    }
    Ok(out)
}

fn pretrain_images<'a>(cfg: &ExperimentConfig, split: &'a DatasetSplit) -> Vec<&'a [f64]> {
    let cap = cfg.pretrain.as_ref().map_or(0, |p| p.images);
    split.train.inputs().iter().take(cap).map(Vec::as_slice).collect()
}

fn prepare_seed<T: Real>(cfg: &ExperimentConfig, seed: u64) -> Result<SeedSetup<T>> {
    let base = cfg.base_split(seed)?;
    let split = cfg.split_for(&base, seed)?;
    drop(base);
    let arch = cfg.arch_for(&split)?;
    let random = init_params(&arch, rng::derive(seed, "init"), InitMode::Random)?;
    let (pretrained, pretrain) = if cfg.pretraining_enabled() {
        let (body, row) = pretrain_body(cfg, &split, &random, seed, Tally::none())?;
        (Some(body), Some(row))
    } else {
        (None, None)
    };
    Ok(SeedSetup {
        seed,
        split,
        random,
        pretrained,
        pretrain,
    })
}

/// Rotation-pretrained task model for one seed, or the configured checkpoint.
pub fn pretrain_body<T: Real>(
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
    init: &ModelParams<T>,
    seed: u64,
    tally: Tally<'_>,
) -> Result<(ModelParams<T>, PretrainRow)> {
    let pc = cfg
        .pretrain
        .as_ref()
        .ok_or_else(|| Error::Config("pretraining is not configured".into()))?;
    if let Some(dir) = &pc.checkpoint {
        let body: ModelParams<T> = load_checkpoint(dir)?;
        if body.arch() != init.arch() {
            return Err(Error::Config(format!(
                "checkpoint {} was saved for a different architecture",
                dir.display()
            )));
        }
        return Ok((
            body,
            PretrainRow {
                seed,
                images: 0,
                rotation_acc: None,
            },
        ));
    }
    let images = pretrain_images(cfg, split);
    let hyper = pc.train.with_seed(rng::derive(seed, "pretrain"));
    let out = pretrain_rotations(init, &images, &hyper, tally)?;
    let held: Vec<&[f64]> = split.validation.iter().map(|v| v.input.as_slice()).collect();
    let acc = rotation_accuracy(&out.rotation, &held)?;
    Ok((
        out.params,
        PretrainRow {
            seed,
            images: images.len(),
            rotation_acc: Some(acc),
        },
    ))
}

fn run_arm<T: Real>(cfg: &ExperimentConfig, s: &SeedSetup<T>, m: &MethodConfig) -> ArmOutput {
    let mut out = ArmOutput::default();
    let label = m.label();
    if let Err((iteration, e)) = arm_loop(cfg, s, m, &label, &mut out) {
        out.aborted = Some(AbortedArm {
            method: label,
            seed: s.seed,
            iteration,
            error: e.to_string(),
        });
    }
    out
}

fn arm_loop<T: Real>(
    cfg: &ExperimentConfig,
    s: &SeedSetup<T>,
    m: &MethodConfig,
    label: &str,
    out: &mut ArmOutput,
) -> std::result::Result<(), (usize, Error)> {
    let setup = |e: Error| (0, e);
    let split = &s.split;
    let d = split.num_classes;
    let theta0 = match cfg.init_for(m) {
        InitChoice::Pretrained => s
            .pretrained
            .as_ref()
            .ok_or_else(|| setup(Error::Config(format!("{label}: no pretrained body"))))?,
        InitChoice::Random => &s.random,
    };
    // Ensemble members past the first get their own head.
    let e = m.method.ensemble_size();
    let mut starts = vec![theta0.clone()];
    for member in 1..e {
        let mseed = rng::mix(rng::derive(s.seed, "ensemble"), member as u64);
        let mode = match cfg.init_for(m) {
            InitChoice::Pretrained => InitMode::FromPretrained(theta0),
            InitChoice::Random => InitMode::Random,
        };
        starts.push(init_params(theta0.arch(), mseed, mode).map_err(setup)?);
    }
    let iterations = cfg.iterations_for(m);
    let mut state = PoolState::new(split.train.len(), cfg.pool_size, iterations).map_err(setup)?;
    let mut oracle = Oracle::new();
    let counter = PassCounter::new();
    let mut models = starts.clone();
    let rare = cfg.rare();

    for b in 1..=iterations {
        let fail = |e: Error| (b, e);
        let clock = Instant::now();
        let ctx = AcquisitionContext {
            models: &models,
            split,
            seed: rng::mix(rng::derive(s.seed, "acquire"), b as u64),
            counter: &counter,
        };
        let rec = acquire(&mut state, &mut oracle, &m.method, &ctx).map_err(fail)?;
        let expected = m.method.expected_passes(&rec, d);
        if rec.acquisition != expected {
            return Err(fail(Error::Accounting(format!(
                "{label} iteration {b}: acquisition spent {}/{} forward/backward, expected {}/{}",
                rec.acquisition.forward, rec.acquisition.backward, expected.forward, expected.backward
            ))));
        }

        let labeled = state.labeled();
        let rows: Vec<&[f64]> = labeled.iter().map(|&i| split.train.input(i)).collect();
        let labels: Vec<usize> = labeled
            .iter()
            .map(|&i| {
                oracle
                    .label(i)
                    .ok_or(Error::invalid(format!("train index {i} not revealed")))
            })
            .collect::<Result<_>>()
            .map_err(fail)?;
        let before = counter.get(Phase::Training);
        let train_seed = rng::mix(rng::derive(s.seed, "train"), b as u64);
        models = starts
            .iter()
            .enumerate()
            .map(|(member, start)| {
                let hyper = cfg.train.with_seed(rng::mix(train_seed, member as u64));
                train(start, &rows, &labels, &hyper, Tally::new(&counter, Phase::Training))
            })
            .collect::<Result<_>>()
            .map_err(fail)?;
        let training = counter.get(Phase::Training) - before;
        let want = (e * cfg.train.epochs * labeled.len()) as u64;
        if training.forward != want || training.backward != want {
            return Err(fail(Error::Accounting(format!(
                "{label} iteration {b}: training spent {}/{} forward/backward, expected {want}/{want}",
                training.forward, training.backward
            ))));
        }

        let eval = evaluate_ensemble(&models, split, Tally::new(&counter, Phase::Evaluation)).map_err(fail)?;
        let wall_ms = cfg.record_wall_time.then(|| clock.elapsed().as_secs_f64() * 1e3);
        out.rows.push(ReportRow {
            method: label.to_string(),
            seed: s.seed,
            iteration: b,
            labeled_count: labeled.len(),
            test_acc: eval.accuracy,
            mean_class_acc: eval.mean_class_accuracy(),
            rare_class_acc: if rare.is_empty() {
                None
            } else {
                Some(eval.mean_over(&rare))
            },
            al_forward: rec.acquisition.forward,
            al_backward: rec.acquisition.backward,
            wall_ms,
        });
        out.per_class
            .extend(eval.per_class.iter().enumerate().map(|(class, acc)| PerClassRow {
                method: label.to_string(),
                seed: s.seed,
                iteration: b,
                class,
                accuracy: *acc,
            }));
        out.selections.push(SelectionLine {
            method: label.to_string(),
            seed: s.seed,
            record: rec,
            training,
        });
        out.confusion = Some(ConfusionMatrix {
            method: label.to_string(),
            seed: s.seed,
            iteration: b,
            counts: eval.confusion,
        });
    }
    Ok(())
}

/// Test-set evaluation of the ensemble's mean softmax.
pub fn evaluate_ensemble<T: Real>(
    models: &[ModelParams<T>],
    split: &DatasetSplit,
    tally: Tally<'_>,
) -> Result<Evaluation> {
    if models.is_empty() {
        return Err(Error::Empty("model list"));
    }
    let truth: Vec<usize> = split
        .test
        .iter()
        .map(|s| s.label.ok_or(Error::invalid("test sample without a label")))
        .collect::<Result<_>>()?;
    let rows: Vec<&[f64]> = split.test.iter().map(|s| s.input.as_slice()).collect();
    let mut mean = Array2::<f64>::zeros((rows.len(), split.num_classes));
    for params in models {
        mean += &predict(params, &rows, tally)?;
    }
    let predicted: Vec<usize> = mean.axis_iter(Axis(0)).map(|r| argmax(r.iter().copied())).collect();
    Evaluation::from_predictions(&truth, &predicted, split.num_classes)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

fn write_rows<S: Serialize>(path: &Path, rows: &[S], header: &[&str]) -> Result<()> {
    let mut w = csv_writer(path)?;
    if rows.is_empty() {
        w.write_record(header).map_err(|e| csv_error(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the report, summary, per-class table, selections, confusion
/// matrices, pretraining log, failures and the resolved config.
pub fn write_outcome(cfg: &ExperimentConfig, out: &RunOutcome) -> Result<()> {
    let dir = &cfg.output_dir;
    let confusion_dir = dir.join(CONFUSION_DIR);
    fs::create_dir_all(&confusion_dir).map_err(|e| Error::io(&confusion_dir, e))?;

    write_rows(&dir.join(REPORT_FILE), &out.rows, &ReportRow::HEADER)?;
    write_rows(
        &dir.join(PER_CLASS_FILE),
        &out.per_class,
        &["method", "seed", "iteration", "class", "accuracy"],
    )?;
    write_rows(
        &dir.join(ABORTED_FILE),
        &out.aborted,
        &["method", "seed", "iteration", "error"],
    )?;
    write_rows(
        &dir.join(PRETRAIN_FILE),
        &out.pretrain,
        &["seed", "images", "rotation_acc"],
    )?;
    let complete: Vec<ReportRow> = out
        .rows
        .iter()
        .filter(|r| !out.aborted.iter().any(|a| a.method == r.method && a.seed == r.seed))
        .cloned()
        .collect();
    if !complete.is_empty() {
        write_summary(&aggregate(&complete)?, dir.join(SUMMARY_FILE))?;
    }

    let path = dir.join(SELECTIONS_FILE);
    let mut w = create(&path)?;
    for line in &out.selections {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    for c in &out.confusion {
        let path = confusion_dir.join(format!("{}_seed{}.csv", c.method, c.seed));
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&path)
            .map_err(|e| csv_error(&path, e))?;
        for row in &c.counts {
            w.serialize(row).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    let path = dir.join(CONFIG_FILE);
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, cfg)?;
    w.flush().map_err(|e| Error::io(&path, e))
}
