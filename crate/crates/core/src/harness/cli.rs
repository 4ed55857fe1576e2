use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use super::config::ExperimentConfig;
use super::report::aggregate_files;
use super::run::{pretrain_body, run_experiment};
use crate::data::read_matrix;
use crate::error::{Error, Result};
use crate::features::{standardize, FeatureSet};
use crate::kernels::{pcc_kernel, pfk};
use crate::model::{init_params, save_checkpoint, InitMode, PassCounter, Phase, Tally};
use crate::rng;
use crate::selection::{k_center_greedy, select_pool};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fkal", version, about = "Fisher-kernel active learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Parallel arm slots.
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select a pool from precomputed descriptor and score matrices.
    Select {
        #[arg(long)]
        val_z: PathBuf,
        #[arg(long)]
        val_g: Option<PathBuf>,
        #[arg(long)]
        train_z: PathBuf,
        #[arg(long)]
        train_g: Option<PathBuf>,
        #[arg(long = "pool")]
        pool: usize,
        #[arg(long, value_enum, default_value_t = SelectMethod::Pfk)]
        method: SelectMethod,
    },
    /// Rotation-pretrain the configured architecture and save a checkpoint.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate run reports into a mean/std summary.
    Report {
        #[arg(long)]
        glob: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SelectMethod {
    Pcc,
    Pfk,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Output goes to the given writers.
pub fn run_cli<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().ansi().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(sink, "{text}");
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(cmd: Command, stdout: &mut dyn Write) -> Result<()> {
    let out_err = |e: std::io::Error| Error::io("<stdout>", e);
    match cmd {
        Command::Run { config, jobs, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let outcome = run_experiment(&cfg)?;
            writeln!(
                stdout,
                "{} rows written to {}",
                outcome.rows.len(),
                outcome.output_dir.display()
            )
            .map_err(out_err)?;
            if let Some(a) = outcome.aborted.first() {
                return Err(Error::Config(format!(
                    "{} arm(s) aborted; first: {} seed {} iteration {}: {}",
                    outcome.aborted.len(),
                    a.method,
                    a.seed,
                    a.iteration,
                    a.error
                )));
            }
        }
        Command::Select {
            val_z,
            val_g,
            train_z,
            train_g,
            pool,
            method,
        } => {
            let picks = select_from_files(&val_z, val_g.as_deref(), &train_z, train_g.as_deref(), pool, method)?;
            for i in picks {
                writeln!(stdout, "{i}").map_err(out_err)?;
            }
        }
        Command::Pretrain { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(p) = cfg.pretrain.as_mut() {
                p.checkpoint = None;
            }
            let seed = cfg.seeds[0];
            let split = cfg.split_for(&cfg.base_split(seed)?, seed)?;
            let arch = cfg.arch_for(&split)?;
            let init = init_params::<f32>(&arch, rng::derive(seed, "init"), InitMode::Random)?;
            let counter = PassCounter::new();
            let (body, row) = pretrain_body(&cfg, &split, &init, seed, Tally::new(&counter, Phase::Pretraining))?;
            save_checkpoint(&body, &out)?;
            writeln!(
                stdout,
                "pretrained on {} images, rotation accuracy {:.4}, saved to {}",
                row.images,
                row.rotation_acc.unwrap_or(f64::NAN),
                out.display()
            )
            .map_err(out_err)?;
        }
        Command::Report { glob, out } => {
            let rows = aggregate_files(&glob, &out)?;
            writeln!(stdout, "{} summary rows written to {}", rows.len(), out.display()).map_err(out_err)?;
        }
    }
    Ok(())
}

fn load_columns(path: &Path) -> Result<FeatureSet> {
    let m = read_matrix(path)?.mapv(f64::from);
    let mut m = m.reversed_axes().as_standard_layout().to_owned();
    for mut col in m.rows_mut() {
        standardize(col.as_slice_mut().expect("standard layout"));
    }
    let m = m.reversed_axes();
    let n = m.ncols();
    FeatureSet::new(vec!["input".into()], vec![m], (0..n).collect())
}

/// One-shot selection over single-scale `L x count` matrices. Validation
/// columns are thinned to `pool` by k-center when there are more of them.
fn select_from_files(
    val_z: &Path,
    val_g: Option<&Path>,
    train_z: &Path,
    train_g: Option<&Path>,
    pool: usize,
    method: SelectMethod,
) -> Result<Vec<usize>> {
    let zv = load_columns(val_z)?;
    let z = load_columns(train_z)?;
    let keep = if zv.len() > pool {
        k_center_greedy(&zv, pool)?
    } else {
        (0..zv.len()).collect()
    };
    let zv_used = zv.select(&keep)?;
    let kernel = match method {
        SelectMethod::Pcc => pcc_kernel(&zv_used, &z)?,
        SelectMethod::Pfk => {
            let (Some(val_g), Some(train_g)) = (val_g, train_g) else {
                return Err(Error::Config("--method pfk needs --val-g and --train-g".into()));
            };
            let gv = load_columns(val_g)?.select(&keep)?;
            let g = load_columns(train_g)?;
            pfk(&zv_used, &gv, &z, &g)?
        }
    };
    select_pool(&kernel, pool)
}
