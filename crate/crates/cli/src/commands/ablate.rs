//! The ablation matrix: both base networks, a fusion network trained with
//! and without the consistency loss, every inference method on the
//! validation split, and one evaluation over all of them.

use std::fs;

use patchfusion::dataio::{load_image, DiskDataset, Split, MANIFEST_FILE};
use patchfusion::metrics::MethodSummary;
use patchfusion::training::Stage;
use serde::{Deserialize, Serialize};

use super::infer::{load_pipeline, write_prediction};
use super::{create_dir, eval, require, train};
use crate::config::{AblateRunConfig, CommandConfig, EvalRunConfig, InferRunConfig, TrainRunConfig};
use crate::error::{CliError, Result};
use crate::manifest::{RunRecord, RUN_MANIFEST};
use crate::methods::{predict_image, Method, PredictOptions};

pub const REPORT_JSON: &str = "ablation.json";
const CAT: &str = "cat";
const NO_CAT: &str = "nocat";

/// `lhs < rhs` between two aggregate numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub lhs_label: String,
    pub lhs: f64,
    pub rhs_label: String,
    pub rhs: f64,
    pub holds: bool,
}

impl Comparison {
    fn new(name: &str, lhs: (&str, f64), rhs: (&str, f64)) -> Self {
        Self {
            name: name.to_string(),
            lhs_label: lhs.0.to_string(),
            lhs: lhs.1,
            rhs_label: rhs.0.to_string(),
            rhs: rhs.1,
            holds: lhs.1 < rhs.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub summary: Vec<MethodSummary>,
    pub comparisons: Vec<Comparison>,
}

impl AblationReport {
    pub fn comparison(&self, name: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.name == name)
    }
}

fn train_stage(cfg: &AblateRunConfig, stage: Stage, tag: &str, mu2: f64) -> Result<()> {
    let epochs = match stage {
        Stage::Fusion => cfg.fusion_epochs,
        _ => cfg.base_epochs,
    };
    let mut t = TrainRunConfig {
        data: cfg.data.clone(),
        out: cfg.out.join("ckpt"),
        stage,
        tag: tag.to_string(),
        epochs,
        lr: cfg.lr,
        seed: cfg.seed,
        mu2,
        max_steps: cfg.max_steps,
        model: cfg.model.clone(),
        ..TrainRunConfig::default()
    };
    t.finalize()?;
    let m = train::run(&t)?;
    log::info!("trained {} in {:.0}s", t.stem(), m.wall_time_s);
    Ok(())
}

fn mean_of(summary: &[MethodSummary], label: &str, field: fn(&MethodSummary) -> Option<f64>) -> Result<f64> {
    summary
        .iter()
        .find(|s| s.method == label)
        .and_then(field)
        .ok_or_else(|| CliError::Config(format!("evaluation has no value for {label}")))
}

pub fn run(cfg: &AblateRunConfig) -> Result<AblationReport> {
    let manifest = cfg.data.join(MANIFEST_FILE);
    require("dataset manifest", &manifest)?;
    create_dir(&cfg.out)?;
    let mut rec = RunRecord::start(&cfg.out);
    rec.input(&manifest)?;
    let val = DiskDataset::open(&cfg.data, Split::Val)?;
    rec.dataset_hash = Some(val.manifest.hash()?);

    train_stage(cfg, Stage::Coarse, "", 0.0)?;
    train_stage(cfg, Stage::Fine, "", 0.0)?;
    train_stage(cfg, Stage::Fusion, CAT, cfg.mu2)?;
    train_stage(cfg, Stage::Fusion, NO_CAT, 0.0)?;

    let ckpt_dir = cfg.out.join("ckpt");
    let with_cat = load_pipeline(&ckpt_dir, CAT, true, &mut rec)?;
    let without_cat = load_pipeline(&ckpt_dir, NO_CAT, true, &mut rec)?;
    let mut cat_methods = vec![Method::Coarse, Method::Fine, Method::Baseline, Method::P16, Method::P49];
    if cfg.r > 0 {
        cat_methods.push(Method::R);
    }
    let no_cat_methods = [Method::P16, Method::P49];
    let opts = PredictOptions {
        r: cfg.r,
        seed: cfg.seed,
        sigma: cfg.sigma,
        ce: true,
    };
    let write_cfg = InferRunConfig {
        ce: true,
        counts: true,
        ..InferRunConfig::default()
    };
    let preds_root = cfg.out.join("preds");
    let label = |m: Method, tag: &str| if tag == NO_CAT { format!("{m}-{tag}") } else { m.to_string() };
    for (i, id) in val.ids().iter().enumerate() {
        let image = load_image(&val.manifest.image_path(&cfg.data, Split::Val, id))?;
        for (pipeline, methods, tag) in [(&with_cat, &cat_methods[..], CAT), (&without_cat, &no_cat_methods[..], NO_CAT)] {
            for pred in predict_image(pipeline, &image, methods, &opts)? {
                let dir = preds_root.join(label(pred.method, tag));
                create_dir(&dir)?;
                write_prediction(&dir, id, &pred, &write_cfg, pipeline.config.depth_bounds, &mut rec)?;
            }
        }
        log::info!("[{}/{}] predicted {id}", i + 1, val.ids().len());
    }

    let mut labels: Vec<String> = cat_methods.iter().map(|&m| label(m, CAT)).collect();
    labels.extend(no_cat_methods.iter().map(|&m| label(m, NO_CAT)));
    let mut eval_cfg = EvalRunConfig {
        data: cfg.data.clone(),
        split: Split::Val,
        preds: preds_root,
        methods: labels,
        out: cfg.out.join("eval"),
        ..EvalRunConfig::default()
    };
    eval_cfg.finalize()?;
    let (_, summary) = eval::run(&eval_cfg)?;

    let rms = |l: &str| mean_of(&summary, l, |s| Some(s.rms));
    let ce = |l: &str| mean_of(&summary, l, |s| s.ce);
    let (p16, p16_nocat) = (Method::P16.to_string(), label(Method::P16, NO_CAT));
    let (coarse_rms, fine_rms) = (rms("coarse")?, rms("fine")?);
    let (base_label, base_rms) = if coarse_rms <= fine_rms {
        ("coarse", coarse_rms)
    } else {
        ("fine", fine_rms)
    };
    let comparisons = vec![
        Comparison::new("fusion_rmse_below_base", (&p16, rms(&p16)?), (base_label, base_rms)),
        Comparison::new("consistency_training_lowers_ce", (&p16, ce(&p16)?), (&p16_nocat, ce(&p16_nocat)?)),
        Comparison::new("consistency_inference_lowers_ce", ("p49", ce("p49")?), (&p16, ce(&p16)?)),
    ];
    let report = AblationReport { summary, comparisons };
    let path = cfg.out.join(REPORT_JSON);
    fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| CliError::io(&path, e))?;
    rec.output(&path)?;
    for c in &report.comparisons {
        log::info!(
            "{}: {} {:.5} < {} {:.5} {}",
            c.name,
            c.lhs_label,
            c.lhs,
            c.rhs_label,
            c.rhs,
            if c.holds { "holds" } else { "does not hold" }
        );
    }
    rec.finish("ablate", cfg, RUN_MANIFEST)?;
    Ok(report)
}
