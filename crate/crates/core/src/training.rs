//! Three-stage training: the coarse network on downsampled whole images,
//! the fine network on native-resolution crops, then the fusion network on
//! overlapping crop pairs with the consistency loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{resize, ResizeMode, Sample, SampleSource};
use crate::error::{Error, Result};
use crate::geometry::{random_window_with, sample_overlapping_pair_with, Window};
use crate::inference::downsample_to_patch;
use crate::losses::{consistency_loss, silog_loss_var, LossReport, LossWeights, SilogParams};
use crate::models::{
    base_forward, fusion_forward_with_g2l, g2l_pyramid, init_base_params, init_fusion_params, roi_tensor,
    FusionInputs, ModelConfig,
};
use crate::nn::{AdamW, CosineSchedule, Graph, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Fine,
    Fusion,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Stage::Coarse),
            "fine" => Ok(Stage::Fine),
            "fusion" => Ok(Stage::Fusion),
            other => Err(Error::InvalidArgument(format!("unknown stage {other:?}"))),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Coarse => "coarse",
            Stage::Fine => "fine",
            Stage::Fusion => "fusion",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    /// Samples per step for the base networks; crop pairs (each from a
    /// distinct image) per step for the fusion network.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mu1: f64,
    pub mu2: f64,
    /// Minimum overlap of a training pair, as a fraction of patch area.
    pub pair_min_overlap: f64,
    pub flip: bool,
    pub silog: SilogParams,
    /// Stops early after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl TrainConfig {
    pub fn for_stage(stage: Stage) -> Self {
        let (epochs, batch_size) = match stage {
            Stage::Coarse | Stage::Fine => (16, 4),
            Stage::Fusion => (12, 2),
        };
        Self {
            stage,
            epochs,
            batch_size,
            lr: 3e-4,
            weight_decay: 1e-2,
            seed: 0,
            mu1: 0.1,
            mu2: 0.1,
            pair_min_overlap: 0.25,
            flip: true,
            silog: SilogParams::default(),
            max_steps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if self.mu1 < 0.0 || self.mu2 < 0.0 || !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("weights must be non-negative and lr positive".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            mu1: self.mu1,
            mu2: self.mu2,
        }
    }

    fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    fn total_steps(&self, n: usize) -> usize {
        let full = self.epochs * self.steps_per_epoch(n);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// Hooks called during training.
pub trait TrainMonitor {
    fn on_step(&mut self, _step: usize, _report: &LossReport) -> Result<()> {
        Ok(())
    }

    /// Called after every epoch with the current parameters and the state
    /// of the training random stream.
    fn on_epoch(&mut self, _epoch: usize, _step: usize, _params: &ParamSet<f32>, _rng: &ChaCha8Rng) -> Result<()> {
        Ok(())
    }
}

impl TrainMonitor for () {}

/// Collects every step report in memory.
#[derive(Default)]
pub struct Recorder {
    pub reports: Vec<LossReport>,
}

impl TrainMonitor for Recorder {
    fn on_step(&mut self, _step: usize, report: &LossReport) -> Result<()> {
        self.reports.push(*report);
        Ok(())
    }
}

pub struct TrainOutcome {
    pub params: ParamSet<f32>,
    pub steps: usize,
}

/// Accumulates gradients over a batch and applies one optimizer step.
struct Trainer {
    params: ParamSet<f32>,
    opt: AdamW<f32>,
    schedule: CosineSchedule,
    step: usize,
}

impl Trainer {
    fn new(params: ParamSet<f32>, cfg: &TrainConfig, total_steps: usize) -> Self {
        let opt = AdamW::new(&params, cfg.weight_decay);
        Self {
            params,
            opt,
            schedule: CosineSchedule {
                base_lr: cfg.lr,
                total_steps,
            },
            step: 0,
        }
    }

    /// Averages per-item gradients and reports, then updates.
    fn apply(&mut self, items: Vec<(ParamSet<f32>, LossReport)>, monitor: &mut dyn TrainMonitor) -> Result<()> {
        let n = items.len() as f64;
        let mut grad = self.params.zeros_like();
        let (mut total, mut si, mut feat, mut depth) = (0.0, 0.0, 0.0, 0.0);
        let (mut mu1, mut mu2) = (0.0, 0.0);
        for (g, r) in &items {
            grad.axpy(1.0 / n as f32, g)?;
            total += r.total / n;
            si += r.si / n;
            feat += r.consistency_feat / n;
            depth += r.consistency_depth / n;
            (mu1, mu2) = (r.mu1, r.mu2);
        }
        let report = LossReport {
            total,
            si,
            consistency_feat: feat,
            consistency_depth: depth,
            mu1,
            mu2,
        };
        if !report.is_finite() || !grad.all_finite() {
            return Err(Error::Diverged { step: self.step });
        }
        let lr = self.schedule.lr(self.step);
        self.opt.update(&mut self.params, &grad, lr)?;
        monitor.on_step(self.step, &report)?;
        self.step += 1;
        Ok(())
    }
}

fn maybe_flip(sample: Sample, rng: &mut ChaCha8Rng, flip: bool) -> Sample {
    if flip && rng.random_bool(0.5) {
        sample.flip_horizontal()
    } else {
        sample
    }
}

/// Mask of output cells whose whole source footprint is valid.
fn downsample_mask(mask: &[bool], h: usize, w: usize, oh: usize, ow: usize) -> Result<Vec<bool>> {
    let m = Tensor::from_vec(&[h, w], mask.iter().map(|&v| v as u8 as f32).collect())?;
    let r = resize(&m, oh, ow, ResizeMode::Area)?;
    Ok(r.data().iter().map(|&v| v > 1.0 - 1e-4).collect())
}

fn crop_mask(mask: &[bool], w: usize, win: &Window) -> Vec<bool> {
    let mut out = Vec::with_capacity(win.area());
    for y in win.y0..win.y1() {
        out.extend_from_slice(&mask[y * w + win.x0..y * w + win.x1()]);
    }
    out
}

/// One supervised step item for a base network.
fn base_item(
    params: &ParamSet<f32>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    image: &Tensor<f32>,
    gt: &Tensor<f32>,
    mask: &[bool],
) -> Result<(ParamSet<f32>, LossReport)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let out = base_forward(&mut g, &p, model, image)?;
    let loss = silog_loss_var(&mut g, out.depth, gt, mask, cfg.silog)?;
    let si = g.value(loss).data()[0] as f64;
    let grads = g.backward(loss);
    Ok((params.gradients(&p, &grads)?, LossReport::supervised(si)))
}

fn check_source(data: &(impl SampleSource + ?Sized)) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("training set has no samples".into()));
    }
    Ok(())
}

fn train_base(
    data: &(impl SampleSource + ?Sized),
    model: &ModelConfig,
    cfg: &TrainConfig,
    monitor: &mut dyn TrainMonitor,
    coarse: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    check_source(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = init_base_params(model, &mut rng);
    let total = cfg.total_steps(data.len());
    let mut tr = Trainer::new(init, cfg, total);
    let [ph, pw] = model.patch;
    let align = model.coarsest_stride();
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            if tr.step >= total {
                break 'epochs;
            }
            let mut items = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = maybe_flip(data.get(i)?, &mut rng, cfg.flip);
                let (h, w) = s.dims();
                let (image, gt, mask) = if coarse {
                    (
                        downsample_to_patch(&s.image, model)?,
                        downsample_to_patch(&s.depth, model)?,
                        downsample_mask(&s.mask, h, w, ph, pw)?,
                    )
                } else {
                    let win = random_window_with(&mut rng, h, w, ph, pw, align)?;
                    (
                        s.image.crop(win.y0, win.x0, ph, pw)?,
                        s.depth.crop(win.y0, win.x0, ph, pw)?,
                        crop_mask(&s.mask, w, &win),
                    )
                };
                items.push(base_item(&tr.params, model, cfg, &image, &gt, &mask)?);
            }
            tr.apply(items, monitor)?;
        }
        monitor.on_epoch(epoch, tr.step, &tr.params, &rng)?;
    }
    Ok(TrainOutcome {
        steps: tr.step,
        params: tr.params,
    })
}

/// Trains the coarse network on whole images downsampled to patch size.
pub fn train_coarse(
    data: &(impl SampleSource + ?Sized),
    model: &ModelConfig,
    cfg: &TrainConfig,
    monitor: &mut dyn TrainMonitor,
) -> Result<TrainOutcome> {
    train_base(data, model, cfg, monitor, true)
}

/// Trains the fine network on random aligned native-resolution crops.
pub fn train_fine(
    data: &(impl SampleSource + ?Sized),
    model: &ModelConfig,
    cfg: &TrainConfig,
    monitor: &mut dyn TrainMonitor,
) -> Result<TrainOutcome> {
    train_base(data, model, cfg, monitor, false)
}

/// Gradient and losses of the fusion network for one overlapping pair.
#[allow(clippy::too_many_arguments)]
pub fn fusion_pair_step(
    fusion: &ParamSet<f32>,
    coarse: &ParamSet<f32>,
    fine: &ParamSet<f32>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    sample: &Sample,
    windows: (Window, Window),
) -> Result<(ParamSet<f32>, LossReport)> {
    let (h, w) = sample.dims();
    let [ph, pw] = model.patch;
    let mut g = Graph::new();

    let small = downsample_to_patch(&sample.image, model)?;
    let pc = coarse.bind(&mut g, false);
    let c_out = base_forward(&mut g, &pc, model, &small)?;
    let d_c = g.value(c_out.depth).clone();
    let pg = fusion.bind(&mut g, true);
    let f_g2l = g2l_pyramid(&mut g, &pg, model, &c_out.features)?;
    let pf = fine.bind(&mut g, false);

    let mut outs = Vec::with_capacity(2);
    let mut si = Vec::with_capacity(2);
    for win in [windows.0, windows.1] {
        let crop = sample.image.crop(win.y0, win.x0, ph, pw)?;
        let f_out = base_forward(&mut g, &pf, model, &crop)?;
        let d_f = g.value(f_out.depth).clone();
        let d_c_crop = roi_tensor(&d_c, &win, h, w, ph, pw)?;
        let out = fusion_forward_with_g2l(
            &mut g,
            &pg,
            model,
            &FusionInputs {
                crop_img: &crop,
                d_c_crop: &d_c_crop,
                d_guided: &d_f,
                f_c: &c_out.features,
                f_g2l: &f_g2l,
                f_f: &f_out.features,
                window: win,
                image: [h, w],
            },
        )?;
        let gt = sample.depth.crop(win.y0, win.x0, ph, pw)?;
        si.push(silog_loss_var(&mut g, out.depth, &gt, &crop_mask(&sample.mask, w, &win), cfg.silog)?);
        outs.push(out);
    }
    let (feat, depth) = consistency_loss(
        &mut g,
        &outs[0].features,
        &outs[1].features,
        outs[0].depth,
        outs[1].depth,
        &windows.0,
        &windows.1,
    )?;
    let wts = cfg.weights();
    let total = g.weighted_sum(&[
        (si[0], 0.5),
        (si[1], 0.5),
        (feat, wts.mu2),
        (depth, wts.mu2 * wts.mu1),
    ])?;
    let scalar = |v| g.value(v).data()[0] as f64;
    let report = LossReport::new(
        0.5 * (scalar(si[0]) + scalar(si[1])),
        scalar(feat),
        scalar(depth),
        wts,
    );
    let grads = g.backward(total);
    Ok((fusion.gradients(&pg, &grads)?, report))
}

/// Trains the fusion network with the coarse and fine networks frozen.
pub fn train_fusion(
    data: &(impl SampleSource + ?Sized),
    coarse: &ParamSet<f32>,
    fine: &ParamSet<f32>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    monitor: &mut dyn TrainMonitor,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    check_source(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = init_fusion_params(model, &mut rng);
    let total = cfg.total_steps(data.len());
    let mut tr = Trainer::new(init, cfg, total);
    let [ph, pw] = model.patch;
    let align = model.coarsest_stride();
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            if tr.step >= total {
                break 'epochs;
            }
            let mut items = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = maybe_flip(data.get(i)?, &mut rng, cfg.flip);
                let (h, w) = s.dims();
                let (a, b, _) = sample_overlapping_pair_with(&mut rng, h, w, ph, pw, cfg.pair_min_overlap, align)?;
                items.push(fusion_pair_step(&tr.params, coarse, fine, model, cfg, &s, (a, b))?);
            }
            tr.apply(items, monitor)?;
        }
        monitor.on_epoch(epoch, tr.step, &tr.params, &rng)?;
    }
    Ok(TrainOutcome {
        steps: tr.step,
        params: tr.params,
    })
}
