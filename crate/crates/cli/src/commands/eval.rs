use std::fs;
use std::path::{Path, PathBuf};

use patchfusion::dataio::{load_depth, DiskDataset, MANIFEST_FILE};
use patchfusion::metrics::{summarize, EvalReport, MethodSummary};

use super::{create_dir, require};
use crate::commands::infer::{ce_sidecar_path, CeSidecar};
use crate::config::EvalRunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{RunManifest, RunRecord, RUN_MANIFEST};

pub const REPORT_CSV: &str = "eval.csv";
pub const SUMMARY_JSON: &str = "summary.json";

const EXTENSIONS: [&str; 3] = ["pfm", "raw", "png"];

fn find_prediction(dir: &Path, id: &str) -> Option<PathBuf> {
    EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.exists())
}

fn read_ce(dir: &Path, id: &str) -> Result<Option<f64>> {
    let path = ce_sidecar_path(dir, id);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let sidecar: CeSidecar = serde_json::from_str(&text)?;
    Ok(Some(sidecar.ce))
}

pub fn run(cfg: &EvalRunConfig) -> Result<(RunManifest, Vec<MethodSummary>)> {
    let manifest = cfg.data.join(MANIFEST_FILE);
    require("dataset manifest", &manifest)?;
    let data = DiskDataset::open(&cfg.data, cfg.split)?;

    // Resolve every prediction first so all gaps are reported together.
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for method in &cfg.methods {
        let dir = cfg.preds.join(method);
        for id in data.ids() {
            match find_prediction(&dir, id) {
                Some(path) => found.push((method.as_str(), id.as_str(), dir.clone(), path)),
                None => missing.push(format!("{method}/{id}")),
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::MissingPredictions {
            root: cfg.preds.clone(),
            entries: missing,
        });
    }

    create_dir(&cfg.out)?;
    let mut rec = RunRecord::start(&cfg.out);
    rec.input(&manifest)?;
    rec.dataset_hash = Some(data.manifest.hash()?);
    let cap = (cfg.cap_min, cfg.cap_max);
    let mut reports = Vec::with_capacity(found.len());
    for (method, id, dir, path) in found {
        rec.input(&path)?;
        let sample = data.load(id)?;
        let pred = load_depth(&path)?;
        let ce = read_ce(&dir, id)?;
        reports.push(EvalReport::evaluate(id, method, &pred, &sample.depth, &sample.mask, cap, ce)?);
    }

    let mut csv = String::from(EvalReport::CSV_HEADER);
    csv.push('\n');
    for r in &reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    let csv_path = cfg.out.join(REPORT_CSV);
    fs::write(&csv_path, csv).map_err(|e| CliError::io(&csv_path, e))?;
    rec.output(&csv_path)?;

    let summary = summarize(&reports);
    let summary_path = cfg.out.join(SUMMARY_JSON);
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?).map_err(|e| CliError::io(&summary_path, e))?;
    rec.output(&summary_path)?;
    for s in &summary {
        log::info!(
            "{:<12} n={} delta1={:.4} rel={:.4} rms={:.4} silog={:.4} see={:.4} ce={}",
            s.method,
            s.n_images,
            s.delta1,
            s.rel,
            s.rms,
            s.silog,
            s.see,
            s.ce.map_or("-".to_string(), |v| format!("{v:.4}"))
        );
    }
    Ok((rec.finish("eval", cfg, RUN_MANIFEST)?, summary))
}
