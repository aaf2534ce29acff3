use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use patchfusion::dataio::{DiskDataset, Split, MANIFEST_FILE};
use patchfusion::losses::LossReport;
use patchfusion::models::{Checkpoint, ModelConfig, NetKind, RngState};
use patchfusion::nn::ParamSet;
use patchfusion::training::{train_coarse, train_fine, train_fusion, Stage, TrainMonitor};
use rand_chacha::ChaCha8Rng;

use super::{create_dir, require};
use crate::config::TrainRunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{RunManifest, RunRecord};

pub const LOSS_HEADER: &str = "step,total,si,consistency_feat,consistency_depth";

fn kind(stage: Stage) -> NetKind {
    match stage {
        Stage::Coarse => NetKind::Coarse,
        Stage::Fine => NetKind::Fine,
        Stage::Fusion => NetKind::Fusion,
    }
}

/// Streams the loss log and rewrites the checkpoint after every epoch.
struct FileMonitor {
    csv: BufWriter<File>,
    csv_path: PathBuf,
    ckpt_path: PathBuf,
    kind: NetKind,
    model: ModelConfig,
    last_rng: Option<RngState>,
    log_every: usize,
}

impl TrainMonitor for FileMonitor {
    fn on_step(&mut self, step: usize, r: &LossReport) -> patchfusion::Result<()> {
        writeln!(
            self.csv,
            "{step},{},{},{},{}",
            r.total, r.si, r.consistency_feat, r.consistency_depth
        )
        .map_err(|e| patchfusion::Error::Io {
            path: self.csv_path.clone(),
            source: e,
        })?;
        if (step + 1) % self.log_every == 0 {
            log::info!("step {} loss {:.5} si {:.5}", step + 1, r.total, r.si);
        }
        Ok(())
    }

    fn on_epoch(&mut self, epoch: usize, step: usize, params: &ParamSet<f32>, rng: &ChaCha8Rng) -> patchfusion::Result<()> {
        let rng_state = RngState::capture(rng);
        let mut ckpt = Checkpoint::new(self.kind, self.model.clone(), params.clone());
        ckpt.step = step;
        ckpt.rng_state = Some(rng_state.clone());
        ckpt.save(&self.ckpt_path)?;
        self.last_rng = Some(rng_state);
        log::info!("epoch {} done at step {step}", epoch + 1);
        Ok(())
    }
}

fn load_frozen(what: &str, path: &Path, expected: NetKind, model: &ModelConfig) -> Result<Checkpoint> {
    require(what, path)?;
    let ckpt = Checkpoint::load(path)?;
    if ckpt.kind != expected {
        return Err(CliError::Config(format!(
            "{} holds a {} network, expected {expected}",
            path.display(),
            ckpt.kind
        )));
    }
    if &ckpt.config != model {
        return Err(CliError::Config(format!(
            "{} was trained with a different model configuration",
            path.display()
        )));
    }
    Ok(ckpt)
}

pub fn run(cfg: &TrainRunConfig) -> Result<RunManifest> {
    let manifest_path = cfg.data.join(MANIFEST_FILE);
    require("dataset manifest", &manifest_path)?;
    let data = DiskDataset::open(&cfg.data, Split::Train)?;
    let model = cfg.model.model_config(data.manifest.patch)?;
    let train = cfg.train_config();
    create_dir(&cfg.out)?;
    let mut rec = RunRecord::start(&cfg.out);
    rec.input(&manifest_path)?;
    rec.dataset_hash = Some(data.manifest.hash()?);

    let frozen = if cfg.stage == Stage::Fusion {
        let (cp, fp) = (cfg.coarse.clone().unwrap_or_default(), cfg.fine.clone().unwrap_or_default());
        // Report every missing network before loading either.
        let missing: Vec<(String, PathBuf)> = [("coarse checkpoint", &cp), ("fine checkpoint", &fp)]
            .into_iter()
            .filter(|(_, p)| !p.exists())
            .map(|(w, p)| (w.to_string(), p.clone()))
            .collect();
        if !missing.is_empty() {
            return Err(CliError::MissingPrerequisite(missing));
        }
        let coarse = load_frozen("coarse checkpoint", &cp, NetKind::Coarse, &model)?;
        let fine = load_frozen("fine checkpoint", &fp, NetKind::Fine, &model)?;
        rec.input(&cp)?;
        rec.input(&fp)?;
        Some((coarse, fine))
    } else {
        None
    };

    let stem = cfg.stem();
    let ckpt_path = cfg.out.join(format!("{stem}.ckpt"));
    let csv_path = cfg.out.join(format!("{stem}.loss.csv"));
    let file = File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    let mut monitor = FileMonitor {
        csv: BufWriter::new(file),
        csv_path: csv_path.clone(),
        ckpt_path: ckpt_path.clone(),
        kind: kind(cfg.stage),
        model: model.clone(),
        last_rng: None,
        log_every: 50,
    };
    writeln!(monitor.csv, "{LOSS_HEADER}").map_err(|e| CliError::io(&csv_path, e))?;
    log::info!("training {stem} on {} samples", data.ids().len());
    let outcome = match &frozen {
        None if cfg.stage == Stage::Coarse => train_coarse(&data, &model, &train, &mut monitor)?,
        None => train_fine(&data, &model, &train, &mut monitor)?,
        Some((coarse, fine)) => train_fusion(&data, &coarse.params, &fine.params, &model, &train, &mut monitor)?,
    };
    monitor.csv.flush().map_err(|e| CliError::io(&csv_path, e))?;
    let mut ckpt = Checkpoint::new(kind(cfg.stage), model, outcome.params);
    ckpt.step = outcome.steps;
    ckpt.rng_state = monitor.last_rng.take();
    ckpt.save(&ckpt_path)?;
    rec.output(&ckpt_path)?;
    rec.output(&csv_path)?;
    rec.finish("train", cfg, &format!("{stem}.run.json"))
}
