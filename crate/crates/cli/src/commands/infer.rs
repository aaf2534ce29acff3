use std::fs;
use std::path::{Path, PathBuf};

use patchfusion::dataio::{load_image, png16_sidecar, save_depth, save_depth_visualization, DepthFormat, DiskDataset, MANIFEST_FILE};
use patchfusion::inference::Pipeline;
use patchfusion::models::{Checkpoint, NetKind};
use patchfusion::nn::ParamSet;
use serde::{Deserialize, Serialize};

use super::{create_dir, require};
use crate::config::{artifact_stem, InferRunConfig};
use crate::error::{CliError, Result};
use crate::manifest::{RunManifest, RunRecord, RUN_MANIFEST};
use crate::methods::{predict_image, PredictOptions, Prediction};

/// Consistency error of one prediction, stored next to the depth file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CeSidecar {
    pub id: String,
    pub method: String,
    pub ce: f64,
}

pub fn ce_sidecar_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.ce.json"))
}

/// Loads `coarse.ckpt`, `fine.ckpt` and, when `fusion` is set, the fusion
/// checkpoint with the given tag from `dir`.
pub fn load_pipeline(dir: &Path, tag: &str, fusion: bool, rec: &mut RunRecord) -> Result<Pipeline> {
    let mut wanted = vec![(NetKind::Coarse, "coarse".to_string()), (NetKind::Fine, "fine".to_string())];
    if fusion {
        wanted.push((NetKind::Fusion, artifact_stem("fusion", tag)));
    }
    let paths: Vec<(NetKind, PathBuf)> = wanted
        .into_iter()
        .map(|(k, stem)| (k, dir.join(format!("{stem}.ckpt"))))
        .collect();
    let missing: Vec<(String, PathBuf)> = paths
        .iter()
        .filter(|(_, p)| !p.exists())
        .map(|(k, p)| (format!("{k} checkpoint"), p.clone()))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::MissingPrerequisite(missing));
    }
    let mut ckpts = Vec::with_capacity(paths.len());
    for (kind, path) in &paths {
        let c = Checkpoint::load(path)?;
        if c.kind != *kind {
            return Err(CliError::Config(format!("{} holds a {} network, expected {kind}", path.display(), c.kind)));
        }
        rec.input(path)?;
        ckpts.push(c);
    }
    let config = ckpts[0].config.clone();
    if let Some(c) = ckpts.iter().find(|c| c.config != config) {
        return Err(CliError::Config(format!(
            "the {} checkpoint's model configuration differs from the coarse one",
            c.kind
        )));
    }
    let mut params = ckpts.into_iter().map(|c| c.params);
    let mut next = || params.next().unwrap_or_else(ParamSet::new);
    Ok(Pipeline {
        config,
        coarse: next(),
        fine: next(),
        fusion: next(),
    })
}

/// Writes one prediction and its optional side files into `dir`.
pub fn write_prediction(
    dir: &Path,
    id: &str,
    pred: &Prediction,
    cfg: &InferRunConfig,
    depth_bounds: (f64, f64),
    rec: &mut RunRecord,
) -> Result<()> {
    let depth_path = dir.join(format!("{id}.{}", cfg.format.extension()));
    save_depth(&pred.depth, &depth_path, cfg.format, None)?;
    rec.output(&depth_path)?;
    if cfg.format == DepthFormat::Png16 {
        rec.output(&png16_sidecar(&depth_path))?;
    }
    if cfg.counts {
        if let Some(counts) = &pred.counts {
            let path = dir.join(format!("{id}.counts.pfm"));
            save_depth(counts, &path, DepthFormat::Pfm, None)?;
            rec.output(&path)?;
        }
    }
    if cfg.vis {
        let path = dir.join(format!("{id}.vis.png"));
        save_depth_visualization(&pred.depth, &path, depth_bounds.0, depth_bounds.1)?;
        rec.output(&path)?;
    }
    if let Some(ce) = pred.ce {
        let path = ce_sidecar_path(dir, id);
        let sidecar = CeSidecar {
            id: id.to_string(),
            method: pred.method.to_string(),
            ce,
        };
        fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| CliError::io(&path, e))?;
        rec.output(&path)?;
    }
    Ok(())
}

/// Images to predict: a single file, or every sample of a dataset split.
fn inputs(cfg: &InferRunConfig, rec: &mut RunRecord) -> Result<Vec<(String, PathBuf)>> {
    if let Some(path) = &cfg.image {
        require("input image", path)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::Config(format!("cannot name output for {}", path.display())))?;
        return Ok(vec![(id, path.clone())]);
    }
    let manifest = cfg.data.join(MANIFEST_FILE);
    require("dataset manifest", &manifest)?;
    let data = DiskDataset::open(&cfg.data, cfg.split)?;
    rec.input(&manifest)?;
    rec.dataset_hash = Some(data.manifest.hash()?);
    Ok(data
        .ids()
        .iter()
        .map(|id| (id.clone(), data.manifest.image_path(&cfg.data, cfg.split, id)))
        .collect())
}

pub fn options(cfg: &InferRunConfig) -> PredictOptions {
    PredictOptions {
        r: cfg.r,
        seed: cfg.seed,
        sigma: cfg.sigma,
        ce: cfg.ce,
    }
}

pub fn run(cfg: &InferRunConfig) -> Result<RunManifest> {
    create_dir(&cfg.out)?;
    let mut rec = RunRecord::start(&cfg.out);
    let pipeline = load_pipeline(&cfg.checkpoints, &cfg.tag, cfg.mode.uses_fusion(), &mut rec)?;
    let images = inputs(cfg, &mut rec)?;
    let opts = options(cfg);
    for (i, (id, path)) in images.iter().enumerate() {
        let image = load_image(path)?;
        if cfg.image.is_some() {
            rec.input(path)?;
        }
        let mut preds = predict_image(&pipeline, &image, &[cfg.mode], &opts)?;
        let pred = preds.pop().expect("one method requested");
        write_prediction(&cfg.out, id, &pred, cfg, pipeline.config.depth_bounds, &mut rec)?;
        log::info!("[{}/{}] {id} ({})", i + 1, images.len(), cfg.mode);
    }
    rec.finish("infer", cfg, RUN_MANIFEST)
}
