//! Run configuration: defaults, then a TOML file, then command-line flags,
//! then `PF_SEED`. Later layers win. The resolved value is what the run
//! manifest records, and a manifest's config can stand in for the defaults
//! when re-running.

use std::fs;
use std::path::{Path, PathBuf};

use patchfusion::dataio::{DatasetSpec, DepthFormat, SceneConfig, Split, SSIM_THRESHOLD};
use patchfusion::inference::DEFAULT_BLEND_SIGMA;
use patchfusion::metrics::DEFAULT_DEPTH_CAP;
use patchfusion::models::ModelConfig;
use patchfusion::training::{Stage, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};
use crate::methods::Method;

pub const SEED_ENV: &str = "PF_SEED";

/// Behavior shared by every command's configuration.
pub trait CommandConfig: Serialize + DeserializeOwned + Default {
    /// Table of the config file that applies to this command.
    const SECTION: &'static str;

    /// Replaces every seed of the run.
    fn override_seed(&mut self, seed: u64);

    /// Fills values that depend on other values and checks the result.
    fn finalize(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Architecture keys shared by `train` and `ablate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelKeys {
    pub levels: usize,
    pub channels: Vec<usize>,
    pub g2l_window: usize,
    pub g2l_heads: usize,
    pub mlp_ratio: f64,
    pub depth_min: f64,
    pub depth_max: f64,
}

impl Default for ModelKeys {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            levels: m.levels,
            channels: m.channels,
            g2l_window: m.g2l_window,
            g2l_heads: m.g2l_heads,
            mlp_ratio: m.mlp_ratio,
            depth_min: m.depth_bounds.0,
            depth_max: m.depth_bounds.1,
        }
    }
}

impl ModelKeys {
    pub fn model_config(&self, patch: [usize; 2]) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            levels: self.levels,
            channels: self.channels.clone(),
            g2l_window: self.g2l_window,
            g2l_heads: self.g2l_heads,
            mlp_ratio: self.mlp_ratio,
            depth_bounds: (self.depth_min, self.depth_max),
            patch,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenDataConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub h: usize,
    pub w: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub format: DepthFormat,
    pub primitives: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub min_step: f64,
    pub focal_baseline: f64,
    pub ssim_threshold: f64,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        let spec = DatasetSpec::default();
        Self {
            out: PathBuf::from("data"),
            seed: spec.seed,
            n_train: spec.n_train,
            n_val: spec.n_val,
            n_test: spec.n_test,
            h: spec.image[0],
            w: spec.image[1],
            patch_h: spec.scene.patch[0],
            patch_w: spec.scene.patch[1],
            format: spec.depth_format,
            primitives: spec.scene.primitives,
            d_min: spec.scene.d_min,
            d_max: spec.scene.d_max,
            min_step: spec.scene.min_step,
            focal_baseline: spec.focal_baseline,
            ssim_threshold: SSIM_THRESHOLD,
        }
    }
}

impl GenDataConfig {
    pub fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.seed,
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            image: [self.h, self.w],
            scene: SceneConfig {
                d_min: self.d_min,
                d_max: self.d_max,
                primitives: self.primitives,
                min_step: self.min_step,
                patch: [self.patch_h, self.patch_w],
                ..SceneConfig::default()
            },
            depth_format: self.format,
            focal_baseline: self.focal_baseline,
            ssim_threshold: self.ssim_threshold,
        }
    }
}

impl CommandConfig for GenDataConfig {
    const SECTION: &'static str = "gen-data";

    fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    fn finalize(&mut self) -> Result<()> {
        self.spec().scene.validate(self.h, self.w)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    /// Dataset root.
    pub data: PathBuf,
    /// Directory receiving checkpoints, loss logs and manifests.
    pub out: PathBuf,
    pub stage: Stage,
    /// Suffix distinguishing runs of the same stage, e.g. ablation arms.
    pub tag: String,
    /// Frozen networks for the fusion stage; default to `out/coarse.ckpt`
    /// and `out/fine.ckpt`.
    pub coarse: Option<PathBuf>,
    pub fine: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mu1: f64,
    pub mu2: f64,
    pub pair_min_overlap: f64,
    pub flip: bool,
    pub max_steps: Option<usize>,
    #[serde(flatten)]
    pub model: ModelKeys,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        let t = TrainConfig::for_stage(Stage::Coarse);
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("runs"),
            stage: Stage::Coarse,
            tag: String::new(),
            coarse: None,
            fine: None,
            epochs: None,
            batch_size: None,
            lr: t.lr,
            weight_decay: t.weight_decay,
            seed: t.seed,
            mu1: t.mu1,
            mu2: t.mu2,
            pair_min_overlap: t.pair_min_overlap,
            flip: t.flip,
            max_steps: None,
            model: ModelKeys::default(),
        }
    }
}

impl TrainRunConfig {
    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig::for_stage(self.stage);
        TrainConfig {
            stage: self.stage,
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr: self.lr,
            weight_decay: self.weight_decay,
            seed: self.seed,
            mu1: self.mu1,
            mu2: self.mu2,
            pair_min_overlap: self.pair_min_overlap,
            flip: self.flip,
            silog: base.silog,
            max_steps: self.max_steps,
        }
    }

    /// File stem shared by this run's checkpoint, loss log and manifest.
    pub fn stem(&self) -> String {
        artifact_stem(&self.stage.to_string(), &self.tag)
    }
}

impl CommandConfig for TrainRunConfig {
    const SECTION: &'static str = "train";

    fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    fn finalize(&mut self) -> Result<()> {
        let t = self.train_config();
        t.validate()?;
        self.epochs = Some(t.epochs);
        self.batch_size = Some(t.batch_size);
        if self.stage == Stage::Fusion {
            self.coarse.get_or_insert_with(|| self.out.join("coarse.ckpt"));
            self.fine.get_or_insert_with(|| self.out.join("fine.ckpt"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferRunConfig {
    /// Dataset root, used when `image` is unset.
    pub data: PathBuf,
    pub split: Split,
    /// A single RGB PNG to predict instead of a dataset split.
    pub image: Option<PathBuf>,
    /// Directory holding `coarse.ckpt`, `fine.ckpt` and the fusion checkpoint.
    pub checkpoints: PathBuf,
    /// Tag of the fusion checkpoint, as given to `train --tag`.
    pub tag: String,
    pub out: PathBuf,
    pub mode: Method,
    /// Random windows added by the `r` mode.
    pub r: usize,
    pub seed: u64,
    pub format: DepthFormat,
    /// Also write a colorized PNG per prediction.
    pub vis: bool,
    /// Also write the per-pixel visit counts of tiled modes.
    pub counts: bool,
    /// Also compute the consistency error on the half-overlap lattice.
    pub ce: bool,
    /// Feathering width of the blending baseline.
    pub sigma: f64,
}

impl Default for InferRunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            split: Split::Val,
            image: None,
            checkpoints: PathBuf::from("runs"),
            tag: String::new(),
            out: PathBuf::from("preds"),
            mode: Method::P16,
            r: 128,
            seed: 0,
            format: DepthFormat::Pfm,
            vis: false,
            counts: false,
            ce: false,
            sigma: DEFAULT_BLEND_SIGMA,
        }
    }
}

impl CommandConfig for InferRunConfig {
    const SECTION: &'static str = "infer";

    fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    fn finalize(&mut self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(CliError::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalRunConfig {
    pub data: PathBuf,
    pub split: Split,
    /// Root holding one prediction directory per method.
    pub preds: PathBuf,
    pub methods: Vec<String>,
    pub out: PathBuf,
    pub cap_min: f64,
    pub cap_max: f64,
}

impl Default for EvalRunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            split: Split::Val,
            preds: PathBuf::from("preds"),
            methods: vec![Method::P16.to_string()],
            out: PathBuf::from("eval"),
            cap_min: DEFAULT_DEPTH_CAP.0,
            cap_max: DEFAULT_DEPTH_CAP.1,
        }
    }
}

impl CommandConfig for EvalRunConfig {
    const SECTION: &'static str = "eval";

    fn override_seed(&mut self, _seed: u64) {}

    fn finalize(&mut self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(CliError::Config("no methods to evaluate".into()));
        }
        if !(self.cap_min < self.cap_max) {
            return Err(CliError::Config(format!("depth cap ({}, {})", self.cap_min, self.cap_max)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateRunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub base_epochs: Option<usize>,
    pub fusion_epochs: Option<usize>,
    pub max_steps: Option<usize>,
    pub lr: f64,
    /// Consistency weight of the consistency-trained arm; the other arm uses 0.
    pub mu2: f64,
    /// Random windows of the `r` mode; 0 leaves it out.
    pub r: usize,
    pub sigma: f64,
    #[serde(flatten)]
    pub model: ModelKeys,
}

impl Default for AblateRunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("ablation"),
            seed: 0,
            base_epochs: None,
            fusion_epochs: None,
            max_steps: None,
            lr: TrainConfig::for_stage(Stage::Coarse).lr,
            mu2: 0.1,
            r: 0,
            sigma: DEFAULT_BLEND_SIGMA,
            model: ModelKeys::default(),
        }
    }
}

impl CommandConfig for AblateRunConfig {
    const SECTION: &'static str = "ablate";

    fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    fn finalize(&mut self) -> Result<()> {
        self.base_epochs.get_or_insert(TrainConfig::for_stage(Stage::Coarse).epochs);
        self.fusion_epochs.get_or_insert(TrainConfig::for_stage(Stage::Fusion).epochs);
        if !(self.mu2 > 0.0) {
            return Err(CliError::Config("ablate needs a positive mu2 for the consistency arm".into()));
        }
        Ok(())
    }
}

/// `stage` or `stage-tag`.
pub fn artifact_stem(name: &str, tag: &str) -> String {
    if tag.is_empty() {
        name.to_string()
    } else {
        format!("{name}-{tag}")
    }
}

/// Layers that make up a resolved configuration.
#[derive(Default)]
pub struct Sources<'a> {
    /// Resolved config of an earlier run, replacing the defaults.
    pub base: Option<Value>,
    pub file: Option<&'a Path>,
    /// Flag values; nulls mean "not given".
    pub flags: Value,
    /// Value of `PF_SEED`, if set.
    pub seed: Option<String>,
}

impl Sources<'_> {
    pub fn seed_from_env() -> Option<String> {
        std::env::var(SEED_ENV).ok()
    }
}

fn overlay(target: &mut Map<String, Value>, layer: &Map<String, Value>, origin: &str, strict: bool) -> Result<()> {
    for (k, v) in layer {
        if v.is_null() {
            continue;
        }
        if !target.contains_key(k) {
            if strict {
                return Err(CliError::Config(format!("unknown key {k:?} in {origin}")));
            }
            continue;
        }
        target.insert(k.clone(), v.clone());
    }
    Ok(())
}

fn as_object(v: Value, origin: &str) -> Result<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        Value::Null => Ok(Map::new()),
        other => Err(CliError::Config(format!("{origin} is not a table: {other}"))),
    }
}

/// Reads a TOML config file into JSON. Top-level keys apply to every
/// command that has them; a table named after the command applies only to
/// it and may not contain unknown keys.
pub fn read_config_file(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
    Ok(serde_json::to_value(table)?)
}

pub fn resolve<C: CommandConfig>(sources: Sources<'_>) -> Result<C> {
    let mut merged = as_object(serde_json::to_value(C::default())?, "defaults")?;
    if let Some(base) = sources.base {
        overlay(&mut merged, &as_object(base, "manifest config")?, "manifest config", true)?;
    }
    if let Some(path) = sources.file {
        let mut file = as_object(read_config_file(path)?, "config file")?;
        let section = file.remove(C::SECTION);
        let shared: Map<String, Value> = file.into_iter().filter(|(_, v)| !v.is_object()).collect();
        overlay(&mut merged, &shared, "config file", false)?;
        if let Some(section) = section {
            let origin = format!("[{}] of {}", C::SECTION, path.display());
            overlay(&mut merged, &as_object(section, &origin)?, &origin, true)?;
        }
    }
    overlay(&mut merged, &as_object(sources.flags, "flags")?, "flags", true)?;
    let mut cfg: C = serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::Config(format!("invalid {} config: {e}", C::SECTION)))?;
    if let Some(s) = sources.seed {
        let seed = s
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        cfg.override_seed(seed);
    }
    cfg.finalize()?;
    Ok(cfg)
}
