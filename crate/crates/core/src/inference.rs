//! Tile-based prediction: the stitched grid pipeline, consistency-aware
//! inference with a running-mean canvas, and the scale/shift + feathered
//! blending baseline.

use serde::{Deserialize, Serialize};

use crate::dataio::{resize, ResizeMode};
use crate::error::{Error, Result};
use crate::geometry::{grid_windows, PatchPlan, PlannedWindow, Window, WindowKind};
use crate::models::{
    base_forward, fusion_forward_with_g2l, g2l_pyramid, roi_tensor, FusionInputs, ModelConfig,
};
use crate::nn::{Graph, ParamSet};
use crate::tensor::Tensor;

/// Per-patch access to the three networks. `prepare` does the per-image
/// work (coarse pass); `fine` and `fuse` run on one window.
pub trait PatchPredictor {
    type Context;

    fn prepare(&self, image: &Tensor<f32>) -> Result<Self::Context>;

    /// Coarse depth at full image resolution.
    fn coarse_depth(&self, ctx: &Self::Context) -> Result<Tensor<f32>>;

    /// Fine depth of the crop under `window`.
    fn fine(&self, ctx: &Self::Context, window: &Window) -> Result<Tensor<f32>>;

    /// Fused depth of the crop under `window`, guided by `guide` or, when
    /// `None`, by the fine depth of the crop.
    fn fuse(&self, ctx: &Self::Context, window: &Window, guide: Option<&Tensor<f32>>) -> Result<Tensor<f32>>;
}

/// Coarse-pass results reused by every patch of one image.
pub struct ImageContext {
    pub image: Tensor<f32>,
    /// Coarse depth at patch resolution.
    pub d_c: Tensor<f32>,
    pub f_c: Vec<Tensor<f32>>,
    pub f_g2l: Vec<Tensor<f32>>,
}

/// The whole image area-downsampled to the network input size.
pub fn downsample_to_patch(map: &Tensor<f32>, cfg: &ModelConfig) -> Result<Tensor<f32>> {
    resize(map, cfg.patch[0], cfg.patch[1], ResizeMode::Area)
}

/// The coarse, fine and fusion networks with their shared configuration.
/// An empty `fusion` set is allowed; only `fuse` needs it.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: ModelConfig,
    pub coarse: ParamSet<f32>,
    pub fine: ParamSet<f32>,
    pub fusion: ParamSet<f32>,
}

impl Pipeline {
    fn check_image(&self, image: &Tensor<f32>) -> Result<(usize, usize)> {
        let (c, h, w) = image.chw()?;
        if c != 3 {
            return Err(Error::Shape(format!("image has {c} channels")));
        }
        let [ph, pw] = self.config.patch;
        if h % ph != 0 {
            return Err(Error::NotDivisible { axis: "height", size: h, divisor: ph });
        }
        if w % pw != 0 {
            return Err(Error::NotDivisible { axis: "width", size: w, divisor: pw });
        }
        Ok((h, w))
    }

    fn crop(&self, ctx: &ImageContext, window: &Window) -> Result<Tensor<f32>> {
        ctx.image.crop(window.y0, window.x0, window.h, window.w)
    }
}

impl PatchPredictor for Pipeline {
    type Context = ImageContext;

    fn prepare(&self, image: &Tensor<f32>) -> Result<ImageContext> {
        self.check_image(image)?;
        let small = downsample_to_patch(image, &self.config)?;
        let mut g = Graph::new();
        let pc = self.coarse.bind(&mut g, false);
        let out = base_forward(&mut g, &pc, &self.config, &small)?;
        let g2l = if self.fusion.is_empty() {
            Vec::new()
        } else {
            let pf = self.fusion.bind(&mut g, false);
            g2l_pyramid(&mut g, &pf, &self.config, &out.features)?
        };
        Ok(ImageContext {
            image: image.clone(),
            d_c: g.value(out.depth).clone(),
            f_c: out.features.iter().map(|&v| g.value(v).clone()).collect(),
            f_g2l: g2l.iter().map(|&v| g.value(v).clone()).collect(),
        })
    }

    fn coarse_depth(&self, ctx: &ImageContext) -> Result<Tensor<f32>> {
        let (_, h, w) = ctx.image.chw()?;
        resize(&ctx.d_c, h, w, ResizeMode::Bilinear)
    }

    fn fine(&self, ctx: &ImageContext, window: &Window) -> Result<Tensor<f32>> {
        let crop = self.crop(ctx, window)?;
        let mut g = Graph::new();
        let p = self.fine.bind(&mut g, false);
        let out = base_forward(&mut g, &p, &self.config, &crop)?;
        Ok(g.value(out.depth).clone())
    }

    fn fuse(&self, ctx: &ImageContext, window: &Window, guide: Option<&Tensor<f32>>) -> Result<Tensor<f32>> {
        if self.fusion.is_empty() {
            return Err(Error::Missing("fusion network parameters".into()));
        }
        let (_, h, w) = ctx.image.chw()?;
        let [ph, pw] = self.config.patch;
        let crop = self.crop(ctx, window)?;
        let mut g = Graph::new();
        let pfine = self.fine.bind(&mut g, false);
        let fine = base_forward(&mut g, &pfine, &self.config, &crop)?;
        let d_f = g.value(fine.depth).clone();
        let d_c_crop = roi_tensor(&ctx.d_c, window, h, w, ph, pw)?;
        let f_c: Vec<_> = ctx.f_c.iter().map(|t| g.constant(t.clone())).collect();
        let f_g2l: Vec<_> = ctx.f_g2l.iter().map(|t| g.constant(t.clone())).collect();
        let p = self.fusion.bind(&mut g, false);
        let out = fusion_forward_with_g2l(
            &mut g,
            &p,
            &self.config,
            &FusionInputs {
                crop_img: &crop,
                d_c_crop: &d_c_crop,
                d_guided: guide.unwrap_or(&d_f),
                f_c: &f_c,
                f_g2l: &f_g2l,
                f_f: &fine.features,
                window: *window,
                image: [h, w],
            },
        )?;
        Ok(g.value(out.depth).clone())
    }
}

/// Running-mean depth canvas and per-pixel visit counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionState {
    pub height: usize,
    pub width: usize,
    canvas: Vec<f64>,
    counts: Vec<u32>,
    /// Number of windows folded in so far.
    pub cursor: usize,
}

impl FusionState {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            canvas: vec![0.0; height * width],
            counts: vec![0; height * width],
            cursor: 0,
        }
    }

    fn check(&self, window: &Window, patch: &Tensor<f32>) -> Result<()> {
        if !window.fits(self.height, self.width) {
            return Err(Error::Shape(format!("window {window} outside {}x{}", self.width, self.height)));
        }
        if patch.hw()? != (window.h, window.w) {
            return Err(Error::Shape(format!("patch {:?} for window {window}", patch.shape())));
        }
        Ok(())
    }

    /// Folds a patch prediction into the canvas:
    /// `canvas ← (canvas·count + new) / (count + 1)`, `count ← count + 1`.
    pub fn fold(&mut self, window: &Window, patch: &Tensor<f32>) -> Result<()> {
        self.check(window, patch)?;
        for y in 0..window.h {
            for x in 0..window.w {
                let i = (window.y0 + y) * self.width + window.x0 + x;
                let n = self.counts[i] as f64;
                self.canvas[i] = (self.canvas[i] * n + patch.at2(y, x) as f64) / (n + 1.0);
                self.counts[i] += 1;
            }
        }
        self.cursor += 1;
        Ok(())
    }

    /// Current canvas values under `window`.
    pub fn crop(&self, window: &Window) -> Result<Tensor<f32>> {
        let mut out = Vec::with_capacity(window.area());
        for y in window.y0..window.y1() {
            for x in window.x0..window.x1() {
                let i = y * self.width + x;
                if self.counts[i] == 0 {
                    return Err(Error::Uncovered { x, y });
                }
                out.push(self.canvas[i] as f32);
            }
        }
        Tensor::from_vec(&[window.h, window.w], out)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// The canvas as a depth map; every pixel must have been visited.
    pub fn depth(&self) -> Result<Tensor<f32>> {
        if let Some(i) = self.counts.iter().position(|&c| c == 0) {
            return Err(Error::Uncovered { x: i % self.width, y: i / self.width });
        }
        Tensor::from_vec(&[self.height, self.width], self.canvas.iter().map(|&v| v as f32).collect())
    }

    pub fn counts_map(&self) -> Tensor<f32> {
        Tensor::from_fn(&[self.height, self.width], |i| self.counts[i] as f32)
    }
}

/// Output of consistency-aware inference.
pub struct CaiOutput {
    pub depth: Tensor<f32>,
    pub state: FusionState,
    /// Raw per-window predictions in processing order.
    pub predictions: Vec<(PlannedWindow, Tensor<f32>)>,
}

fn image_dims(image: &Tensor<f32>) -> Result<(usize, usize)> {
    let (_, h, w) = image.chw()?;
    Ok((h, w))
}

/// Non-overlapping grid pass: each grid window is fused with its own fine
/// depth as guidance and written once.
pub fn infer_stitched<P: PatchPredictor>(p: &P, image: &Tensor<f32>, patch: [usize; 2]) -> Result<(Tensor<f32>, FusionState)> {
    let (h, w) = image_dims(image)?;
    let plan = PatchPlan::grid(h, w, patch[0], patch[1])?;
    let out = infer_cai(p, image, &plan)?;
    Ok((out.depth, out.state))
}

/// Consistency-aware inference over `plan`: the grid windows seed the
/// canvas, then every further window is fused with the current canvas crop
/// as guidance and folded in by running mean, strictly in plan order.
pub fn infer_cai<P: PatchPredictor>(p: &P, image: &Tensor<f32>, plan: &PatchPlan) -> Result<CaiOutput> {
    let ctx = p.prepare(image)?;
    infer_cai_with(p, &ctx, image_dims(image)?, plan)
}

pub fn infer_cai_with<P: PatchPredictor>(
    p: &P,
    ctx: &P::Context,
    (h, w): (usize, usize),
    plan: &PatchPlan,
) -> Result<CaiOutput> {
    if plan.image != [h, w] || !plan.grid_tiles_image() {
        return Err(Error::InvalidArgument(format!(
            "plan grid does not tile the {w}x{h} image"
        )));
    }
    let mut state = FusionState::new(h, w);
    let mut predictions = Vec::with_capacity(plan.len());
    for pw in plan.windows.iter().filter(|pw| pw.kind == WindowKind::Grid) {
        let d = p.fuse(ctx, &pw.window, None)?;
        state.fold(&pw.window, &d)?;
        predictions.push((*pw, d));
    }
    for pw in plan.windows.iter().filter(|pw| pw.kind != WindowKind::Grid) {
        let guide = state.crop(&pw.window)?;
        let d = p.fuse(ctx, &pw.window, Some(&guide))?;
        state.fold(&pw.window, &d)?;
        predictions.push((*pw, d));
    }
    Ok(CaiOutput {
        depth: state.depth()?,
        state,
        predictions,
    })
}

/// Fine predictions of the grid windows pasted side by side.
pub fn infer_fine_stitched<P: PatchPredictor>(p: &P, ctx: &P::Context, (h, w): (usize, usize), patch: [usize; 2]) -> Result<Tensor<f32>> {
    let mut out = Tensor::zeros(&[h, w]);
    for win in grid_windows(h, w, patch[0], patch[1])? {
        out.paste(&p.fine(ctx, &win)?, win.y0, win.x0)?;
    }
    Ok(out)
}

/// Per-patch scale and shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlendFit {
    pub s: f64,
    pub t: f64,
}

/// Least-squares `(s, t)` minimizing `Σ (s·d_f + t − d_c)²` over the mask.
pub fn fit_scale_shift(d_f: &Tensor<f32>, d_c: &Tensor<f32>, mask: &[bool]) -> Result<BlendFit> {
    if d_f.numel() != d_c.numel() || d_f.numel() != mask.len() {
        return Err(Error::Shape("fit_scale_shift inputs differ in size".into()));
    }
    let pts: Vec<(f64, f64)> = d_f
        .data()
        .iter()
        .zip(d_c.data())
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&f, &c), _)| (f as f64, c as f64))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Degenerate(format!("{} masked pixels", pts.len())));
    }
    let n = pts.len() as f64;
    let mf = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mc = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let var = pts.iter().map(|p| (p.0 - mf) * (p.0 - mf)).sum::<f64>();
    let cov = pts.iter().map(|p| (p.0 - mf) * (p.1 - mc)).sum::<f64>();
    if var <= 1e-12 * n * (1.0 + mf * mf) {
        return Err(Error::Degenerate("constant fine depth".into()));
    }
    let s = cov / var;
    Ok(BlendFit { s, t: mc - s * mf })
}

/// Fit used by the baseline: least squares, or unit scale with the mean
/// difference when the fine patch is constant.
pub fn fit_or_fallback(d_f: &Tensor<f32>, d_c: &Tensor<f32>, mask: &[bool]) -> Result<BlendFit> {
    match fit_scale_shift(d_f, d_c, mask) {
        Err(Error::Degenerate(_)) => {
            let (mut sum, mut n) = (0.0, 0usize);
            for ((&f, &c), &m) in d_f.data().iter().zip(d_c.data()).zip(mask) {
                if m {
                    sum += c as f64 - f as f64;
                    n += 1;
                }
            }
            Ok(BlendFit {
                s: 1.0,
                t: if n == 0 { 0.0 } else { sum / n as f64 },
            })
        }
        other => other,
    }
}

/// Gaussian-weighted average of overlapping patches; each patch's weight
/// is centered on it with standard deviation `sigma·min(patch dims)`.
pub fn blend_feathered(patches: &[(Window, Tensor<f32>)], img_h: usize, img_w: usize, sigma: f64) -> Result<Tensor<f32>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma {sigma}")));
    }
    let mut acc = vec![0.0f64; img_h * img_w];
    let mut wsum = vec![0.0f64; img_h * img_w];
    for (win, d) in patches {
        if !win.fits(img_h, img_w) || d.hw()? != (win.h, win.w) {
            return Err(Error::Shape(format!("patch {:?} for window {win}", d.shape())));
        }
        let std = sigma * win.h.min(win.w) as f64;
        let (cy, cx) = (win.h as f64 / 2.0, win.w as f64 / 2.0);
        let wx: Vec<f64> = (0..win.w)
            .map(|x| (-(x as f64 + 0.5 - cx).powi(2) / (2.0 * std * std)).exp())
            .collect();
        for y in 0..win.h {
            let wy = (-(y as f64 + 0.5 - cy).powi(2) / (2.0 * std * std)).exp();
            for (x, &wxv) in wx.iter().enumerate() {
                let i = (win.y0 + y) * img_w + win.x0 + x;
                let wt = wy * wxv;
                acc[i] += wt * d.at2(y, x) as f64;
                wsum[i] += wt;
            }
        }
    }
    if let Some(i) = wsum.iter().position(|&s| s == 0.0) {
        return Err(Error::Uncovered { x: i % img_w, y: i / img_w });
    }
    Tensor::from_vec(&[img_h, img_w], acc.iter().zip(&wsum).map(|(a, s)| (a / s) as f32).collect())
}

/// Default feathering width, as a fraction of the shorter patch side.
pub const DEFAULT_BLEND_SIGMA: f64 = 0.5;

/// The blending baseline: each fine patch of `plan` is aligned to the
/// coarse depth by a least-squares scale and shift, then patches are
/// merged with Gaussian feathering.
pub fn infer_baseline<P: PatchPredictor>(p: &P, ctx: &P::Context, plan: &PatchPlan, sigma: f64) -> Result<Tensor<f32>> {
    let [h, w] = plan.image;
    let coarse = p.coarse_depth(ctx)?;
    let mut patches = Vec::with_capacity(plan.len());
    for pw in &plan.windows {
        let win = pw.window;
        let d_f = p.fine(ctx, &win)?;
        let d_c = coarse.crop(win.y0, win.x0, win.h, win.w)?;
        let fit = fit_or_fallback(&d_f, &d_c, &vec![true; win.area()])?;
        patches.push((win, d_f.map(|v| (fit.s * v as f64 + fit.t).max(1e-3) as f32)));
    }
    blend_feathered(&patches, h, w, sigma)
}
