//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use patchfusion::dataio::{DepthFormat, Split};
use patchfusion::training::Stage;
use serde::Serialize;

use crate::commands;
use crate::config::{resolve, CommandConfig, Sources};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::methods::Method;

#[derive(Debug, Parser)]
#[command(name = "patchfusion", version, about = "Tile-based high-resolution depth estimation")]
pub struct Cli {
    /// TOML file with shared keys and per-command tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Re-run with the resolved configuration recorded in a run manifest;
    /// flags given alongside still override it.
    #[arg(long, global = true)]
    pub from_manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataFlags),
    /// Train one stage.
    Train(TrainFlags),
    /// Predict depth for a dataset split or a single image.
    Infer(InferFlags),
    /// Score predictions against ground truth.
    Eval(EvalFlags),
    /// Train, predict and evaluate the full ablation matrix.
    Ablate(AblateFlags),
    /// Check that the outputs listed in a run manifest are unchanged.
    Verify {
        manifest: PathBuf,
    },
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataFlags {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Image height.
    #[arg(long = "h")]
    pub h: Option<usize>,
    /// Image width.
    #[arg(long = "w")]
    pub w: Option<usize>,
    #[arg(long)]
    pub patch_h: Option<usize>,
    #[arg(long)]
    pub patch_w: Option<usize>,
    /// pfm, png16 or rawf32.
    #[arg(long)]
    pub format: Option<DepthFormat>,
    #[arg(long)]
    pub primitives: Option<usize>,
    #[arg(long)]
    pub d_min: Option<f64>,
    #[arg(long)]
    pub d_max: Option<f64>,
    #[arg(long)]
    pub min_step: Option<f64>,
    #[arg(long)]
    pub focal_baseline: Option<f64>,
    #[arg(long)]
    pub ssim_threshold: Option<f64>,
}

/// Architecture flags shared by `train` and `ablate`.
#[derive(Debug, Args, Serialize)]
pub struct ModelFlags {
    #[arg(long)]
    pub levels: Option<usize>,
    /// Channels per level, finest first, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    #[arg(long)]
    pub g2l_window: Option<usize>,
    #[arg(long)]
    pub g2l_heads: Option<usize>,
    #[arg(long)]
    pub mlp_ratio: Option<f64>,
    #[arg(long)]
    pub depth_min: Option<f64>,
    #[arg(long)]
    pub depth_max: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainFlags {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// coarse, fine or fusion.
    #[arg(long)]
    pub stage: Option<Stage>,
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(long)]
    pub coarse: Option<PathBuf>,
    #[arg(long)]
    pub fine: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mu1: Option<f64>,
    #[arg(long)]
    pub mu2: Option<f64>,
    #[arg(long)]
    pub pair_min_overlap: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub flip: Option<bool>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct InferFlags {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// coarse, fine, baseline, p16, p49 or r.
    #[arg(long)]
    pub mode: Option<Method>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub format: Option<DepthFormat>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub vis: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub counts: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub ce: Option<bool>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalFlags {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub preds: Option<PathBuf>,
    /// Prediction subdirectories to score, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub cap_min: Option<f64>,
    #[arg(long)]
    pub cap_max: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateFlags {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub base_epochs: Option<usize>,
    #[arg(long)]
    pub fusion_epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub mu2: Option<f64>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
}

fn config_for<C: CommandConfig>(cli: &Cli, command: &str, flags: &impl Serialize) -> Result<C> {
    let base = match &cli.from_manifest {
        Some(path) => {
            let m = RunManifest::load(path)?;
            if m.command != command {
                return Err(CliError::Config(format!(
                    "{} records a {} run, not {command}",
                    path.display(),
                    m.command
                )));
            }
            Some(m.config)
        }
        None => None,
    };
    resolve(Sources {
        base,
        file: cli.config.as_deref(),
        flags: serde_json::to_value(flags)?,
        seed: Sources::seed_from_env(),
    })
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the text to print on success.
pub fn run<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    use clap::error::ErrorKind;
    match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(&cli),
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => Ok(e.to_string()),
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or_default();
            Err(CliError::Usage(first.trim_start_matches("error: ").to_string()))
        }
    }
}

fn dispatch(cli: &Cli) -> Result<String> {
    let out = match &cli.command {
        Command::GenData(f) => {
            let cfg = config_for(cli, "gen-data", f)?;
            let m = commands::gen_data::run(&cfg)?;
            format!("dataset hash {}", m.dataset_hash.unwrap_or_default())
        }
        Command::Train(f) => {
            let cfg = config_for(cli, "train", f)?;
            let m = commands::train::run(&cfg)?;
            format!("wrote {} outputs in {:.1}s", m.outputs.len(), m.wall_time_s)
        }
        Command::Infer(f) => {
            let cfg = config_for(cli, "infer", f)?;
            let m = commands::infer::run(&cfg)?;
            format!("wrote {} outputs in {:.1}s", m.outputs.len(), m.wall_time_s)
        }
        Command::Eval(f) => {
            let cfg = config_for(cli, "eval", f)?;
            let (_, summary) = commands::eval::run(&cfg)?;
            serde_json::to_string_pretty(&summary)?
        }
        Command::Ablate(f) => {
            let cfg = config_for(cli, "ablate", f)?;
            let report = commands::ablate::run(&cfg)?;
            serde_json::to_string_pretty(&report)?
        }
        Command::Verify { manifest } => {
            let m = RunManifest::load(manifest)?;
            let changed = m.changed_outputs()?;
            if !changed.is_empty() {
                return Err(CliError::Mismatch(changed));
            }
            format!("{} outputs match", m.outputs.len())
        }
    };
    Ok(out)
}
