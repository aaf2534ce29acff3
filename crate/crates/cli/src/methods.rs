//! Prediction methods compared by `infer`, `eval` and `ablate`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use patchfusion::geometry::{half_overlap_pairs, PatchPlan, Window};
use patchfusion::inference::{
    fit_or_fallback, infer_baseline, infer_cai_with, infer_fine_stitched, ImageContext, PatchPredictor, Pipeline,
};
use patchfusion::metrics::ce_over_pairs;
use patchfusion::{Error, Result, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Coarse network on the downsampled image, upsampled back.
    Coarse,
    /// Fine network on the grid tiles, pasted side by side.
    Fine,
    /// Fine tiles of the grid and shifted windows, scale/shift aligned to
    /// the coarse depth and blended with Gaussian feathering.
    Baseline,
    /// Fusion network on the grid tiles.
    P16,
    /// Consistency-aware inference over the grid and shifted windows.
    P49,
    /// As `p49` plus random windows.
    R,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Coarse,
        Method::Fine,
        Method::Baseline,
        Method::P16,
        Method::P49,
        Method::R,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Coarse => "coarse",
            Method::Fine => "fine",
            Method::Baseline => "baseline",
            Method::P16 => "p16",
            Method::P49 => "p49",
            Method::R => "r",
        }
    }

    /// Whether the method needs a trained fusion network.
    pub fn uses_fusion(self) -> bool {
        matches!(self, Method::P16 | Method::P49 | Method::R)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {s:?}; expected one of coarse, fine, baseline, p16, p49, r")))
    }
}

/// Options shared by every method.
#[derive(Clone, Copy, Debug)]
pub struct PredictOptions {
    pub r: usize,
    pub seed: u64,
    pub sigma: f64,
    pub ce: bool,
}

pub struct Prediction {
    pub method: Method,
    pub depth: Tensor<f32>,
    /// Visit counts of tiled methods.
    pub counts: Option<Tensor<f32>>,
    pub ce: Option<f64>,
}

/// Per-image context that memoizes the guidance-free network calls, so
/// several methods on one image share their fine and plain fused patches.
pub struct CachedContext {
    inner: ImageContext,
    fine: RefCell<HashMap<Window, Tensor<f32>>>,
    plain: RefCell<HashMap<Window, Tensor<f32>>>,
}

/// [`Pipeline`] with memoized guidance-free calls.
pub struct CachedPipeline<'a>(pub &'a Pipeline);

impl PatchPredictor for CachedPipeline<'_> {
    type Context = CachedContext;

    fn prepare(&self, image: &Tensor<f32>) -> Result<CachedContext> {
        Ok(CachedContext {
            inner: self.0.prepare(image)?,
            fine: RefCell::default(),
            plain: RefCell::default(),
        })
    }

    fn coarse_depth(&self, ctx: &CachedContext) -> Result<Tensor<f32>> {
        self.0.coarse_depth(&ctx.inner)
    }

    fn fine(&self, ctx: &CachedContext, window: &Window) -> Result<Tensor<f32>> {
        if let Some(d) = ctx.fine.borrow().get(window) {
            return Ok(d.clone());
        }
        let d = self.0.fine(&ctx.inner, window)?;
        ctx.fine.borrow_mut().insert(*window, d.clone());
        Ok(d)
    }

    fn fuse(&self, ctx: &CachedContext, window: &Window, guide: Option<&Tensor<f32>>) -> Result<Tensor<f32>> {
        if guide.is_some() {
            return self.0.fuse(&ctx.inner, window, guide);
        }
        if let Some(d) = ctx.plain.borrow().get(window) {
            return Ok(d.clone());
        }
        let d = self.0.fuse(&ctx.inner, window, None)?;
        ctx.plain.borrow_mut().insert(*window, d.clone());
        Ok(d)
    }
}

fn plan_for(method: Method, h: usize, w: usize, patch: [usize; 2], align: usize, opts: &PredictOptions) -> Result<PatchPlan> {
    let [ph, pw] = patch;
    match method {
        Method::P16 => PatchPlan::grid(h, w, ph, pw),
        Method::R => PatchPlan::with_random(h, w, ph, pw, opts.r, align, opts.seed),
        _ => PatchPlan::grid_and_shifted(h, w, ph, pw),
    }
}

/// Runs `methods` on one image. Methods share network calls where their
/// inputs coincide; results do not depend on which methods run together.
pub fn predict_image(pipeline: &Pipeline, image: &Tensor<f32>, methods: &[Method], opts: &PredictOptions) -> Result<Vec<Prediction>> {
    let p = CachedPipeline(pipeline);
    let ctx = p.prepare(image)?;
    let (_, h, w) = image.chw()?;
    let patch = pipeline.config.patch;
    let align = pipeline.config.coarsest_stride();
    let (lattice, pairs) = half_overlap_pairs(h, w, patch[0], patch[1])?;
    let lattice_ce = |patches: &dyn Fn(&Window) -> Result<Tensor<f32>>| -> Result<Option<f64>> {
        if !opts.ce {
            return Ok(None);
        }
        let preds = lattice.iter().map(patches).collect::<Result<Vec<_>>>()?;
        Ok(Some(ce_over_pairs(&lattice, &preds, &pairs)?))
    };

    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let pred = match method {
            Method::Coarse => {
                let depth = p.coarse_depth(&ctx)?;
                let ce = lattice_ce(&|win| depth.crop(win.y0, win.x0, win.h, win.w))?;
                Prediction { method, depth, counts: None, ce }
            }
            Method::Fine => {
                let depth = infer_fine_stitched(&p, &ctx, (h, w), patch)?;
                let ce = lattice_ce(&|win| p.fine(&ctx, win))?;
                Prediction { method, depth, counts: None, ce }
            }
            Method::Baseline => {
                let plan = plan_for(method, h, w, patch, align, opts)?;
                let depth = infer_baseline(&p, &ctx, &plan, opts.sigma)?;
                let coarse = p.coarse_depth(&ctx)?;
                let ce = lattice_ce(&|win| {
                    let d_f = p.fine(&ctx, win)?;
                    let d_c = coarse.crop(win.y0, win.x0, win.h, win.w)?;
                    let fit = fit_or_fallback(&d_f, &d_c, &vec![true; win.area()])?;
                    Ok(d_f.map(|v| (fit.s * v as f64 + fit.t).max(1e-3) as f32))
                })?;
                Prediction { method, depth, counts: None, ce }
            }
            Method::P16 | Method::P49 | Method::R => {
                let plan = plan_for(method, h, w, patch, align, opts)?;
                let cai = infer_cai_with(&p, &ctx, (h, w), &plan)?;
                let ce = if method == Method::P16 {
                    lattice_ce(&|win| p.fuse(&ctx, win, None))?
                } else {
                    lattice_ce(&|win| {
                        cai.predictions
                            .iter()
                            .find(|(pw, _)| pw.window == *win)
                            .map(|(_, d)| d.clone())
                            .ok_or_else(|| Error::Missing(format!("plan has no window {win}")))
                    })?
                };
                Prediction {
                    method,
                    counts: Some(cai.state.counts_map()),
                    depth: cai.depth,
                    ce,
                }
            }
        };
        out.push(pred);
    }
    Ok(out)
}
