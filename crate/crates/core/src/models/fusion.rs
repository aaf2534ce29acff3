//! Guided fusion network.
//!
//! The encoder sees only the image crop and the two depth crops. Guidance
//! features enter at the skip connections (attended coarse features,
//! cropped with [`roi`]) and in the decoder (cropped coarse features, fine
//! features and the upsampled coarser decoder level), each merged by a
//! fusion block.

use std::sync::Arc;

use rand::Rng;

use super::base::check_input;
use super::config::ModelConfig;
use super::g2l::{g2l_forward, init_g2l_params};
use super::layers::{conv_relu, depth_head, upsample2};
use crate::error::{Error, Result};
use crate::geometry::Window;
use crate::nn::{Bound, Graph, Interp, ParamSet, Var};
use crate::tensor::{Float, Tensor};

/// Bilinear crop of the feature region that corresponds to `window` in an
/// `img_h×img_w` image, sampled on an `out_h×out_w` grid of cell centers.
#[allow(clippy::too_many_arguments)]
pub fn roi<T: Float>(
    g: &mut Graph<T>,
    feature: Var,
    window: &Window,
    img_h: usize,
    img_w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Var> {
    if window.w == 0 || window.h == 0 || out_h == 0 || out_w == 0 || !window.fits(img_h, img_w) {
        return Err(Error::Degenerate(format!(
            "roi window {window} in {img_w}x{img_h} image"
        )));
    }
    let (_, fh, fw) = g.value(feature).chw()?;
    let sy = fh as f64 / img_h as f64;
    let sx = fw as f64 / img_w as f64;
    let rows = Interp::linear(fh, out_h, window.y0 as f64 * sy, window.h as f64 * sy);
    let cols = Interp::linear(fw, out_w, window.x0 as f64 * sx, window.w as f64 * sx);
    g.resample(feature, Arc::new(rows), Arc::new(cols))
}

/// Same sampling as [`roi`] on a plain tensor.
pub fn roi_tensor<T: Float>(
    map: &Tensor<T>,
    window: &Window,
    img_h: usize,
    img_w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let two_d = map.shape().len() == 2;
    let (c, h, w) = map.chw()?;
    let x = g.constant(map.clone().reshape(&[c, h, w])?);
    let y = roi(&mut g, x, window, img_h, img_w, out_h, out_w)?;
    let out = g.value(y).clone();
    if two_d {
        out.reshape(&[out_h, out_w])
    } else {
        Ok(out)
    }
}

pub fn add_fb_params<T: Float>(p: &mut ParamSet<T>, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) {
    p.add_conv(&format!("{name}.conv1"), cin, cout, 3, rng);
    p.add_conv(&format!("{name}.conv2"), cout, cout, 3, rng);
}

/// Fusion block: channel concatenation, then two 3×3 conv + ReLU layers.
pub fn fb<T: Float>(g: &mut Graph<T>, p: &Bound, name: &str, inputs: &[Var]) -> Result<Var> {
    let x = match inputs {
        [] => return Err(Error::Shape("fusion block without inputs".into())),
        [one] => *one,
        many => g.concat(many)?,
    };
    let y = conv_relu(g, p, &format!("{name}.conv1"), x, 1)?;
    conv_relu(g, p, &format!("{name}.conv2"), y, 1)
}

pub fn init_fusion_params<T: Float>(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamSet<T> {
    let mut p = ParamSet::new();
    for i in 1..=cfg.levels {
        p.extend_prefixed(&format!("g2l{i}."), init_g2l_params(cfg, i, rng));
    }
    let mut prev = 5;
    for i in 1..=cfg.levels {
        let c = cfg.channel(i);
        p.add_conv(&format!("enc{i}.conv"), prev, c, 3, rng);
        add_fb_params(&mut p, &format!("skip{i}"), 2 * c, c, rng);
        prev = c;
    }
    for i in (1..=cfg.levels).rev() {
        let c = cfg.channel(i);
        let cin = 3 * c + if i < cfg.levels { cfg.channel(i + 1) } else { 0 };
        add_fb_params(&mut p, &format!("dec{i}"), cin, c, rng);
    }
    p.add_conv("head.conv", cfg.channel(1), 1, 3, rng);
    p
}

/// Attended coarse features for every level (computed once per image).
pub fn g2l_pyramid<T: Float>(g: &mut Graph<T>, p: &Bound, cfg: &ModelConfig, f_c: &[Var]) -> Result<Vec<Var>> {
    if f_c.len() != cfg.levels {
        return Err(Error::Shape(format!(
            "{} coarse levels, expected {}",
            f_c.len(),
            cfg.levels
        )));
    }
    f_c.iter()
        .enumerate()
        .map(|(i, &f)| g2l_forward(g, p, &format!("g2l{}.", i + 1), cfg, f))
        .collect()
}

/// Maps depths in meters to the unit-centred log scale the encoder consumes.
pub fn normalize_depth<T: Float>(d: &Tensor<T>, bounds: (f64, f64)) -> Tensor<T> {
    let lo = bounds.0.ln();
    let span = bounds.1.ln() - lo;
    d.map(|v| T::from_f64((v.to_f64().max(bounds.0).ln() - lo) / span - 0.5))
}

/// Per-crop inputs of the fusion network.
pub struct FusionInputs<'a, T> {
    /// `[3, p_h, p_w]`
    pub crop_img: &'a Tensor<T>,
    /// Coarse depth sampled on the crop, `[p_h, p_w]`.
    pub d_c_crop: &'a Tensor<T>,
    /// Fine depth, or the running canvas crop during consistency-aware inference.
    pub d_guided: &'a Tensor<T>,
    /// Coarse features of the whole downsampled image.
    pub f_c: &'a [Var],
    /// Attended coarse features (see [`g2l_pyramid`]).
    pub f_g2l: &'a [Var],
    /// Fine features of this crop.
    pub f_f: &'a [Var],
    pub window: Window,
    /// `[h, w]` of the full image.
    pub image: [usize; 2],
}

pub struct FusionOutput {
    pub depth: Var,
    /// Decoder features, finest level first.
    pub features: Vec<Var>,
}

/// Fused depth for one crop, given precomputed attended features.
pub fn fusion_forward_with_g2l<T: Float>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    inp: &FusionInputs<'_, T>,
) -> Result<FusionOutput> {
    check_input(inp.crop_img, 3, cfg)?;
    for d in [inp.d_c_crop, inp.d_guided] {
        if d.hw()? != (cfg.patch[0], cfg.patch[1]) {
            return Err(Error::Shape(format!(
                "depth crop {:?} does not match patch {:?}",
                d.shape(),
                cfg.patch
            )));
        }
    }
    let l = cfg.levels;
    if inp.f_c.len() != l || inp.f_g2l.len() != l || inp.f_f.len() != l {
        return Err(Error::Shape("guidance pyramids must have L levels".into()));
    }
    let [img_h, img_w] = inp.image;
    if !inp.window.fits(img_h, img_w) || inp.window.h != cfg.patch[0] || inp.window.w != cfg.patch[1] {
        return Err(Error::Shape(format!(
            "window {} incompatible with image {img_w}x{img_h} and patch {:?}",
            inp.window, cfg.patch
        )));
    }

    let [ph, pw] = cfg.patch;
    let img = inp.crop_img.map(|v| v - T::from_f64(0.5));
    let dc = normalize_depth(inp.d_c_crop, cfg.depth_bounds).reshape(&[1, ph, pw])?;
    let dg = normalize_depth(inp.d_guided, cfg.depth_bounds).reshape(&[1, ph, pw])?;
    let x = g.constant(Tensor::concat_channels(&[&img, &dc, &dg])?);

    let mut skips = Vec::with_capacity(l);
    let mut h = x;
    for i in 1..=l {
        let c = conv_relu(g, p, &format!("enc{i}.conv"), h, 1)?;
        h = g.max_pool2(c)?;
        let (oh, ow) = cfg.level_dims(i);
        let guide = roi(g, inp.f_g2l[i - 1], &inp.window, img_h, img_w, oh, ow)?;
        skips.push(fb(g, p, &format!("skip{i}"), &[guide, h])?);
    }

    let mut features = vec![x; l];
    let mut prev: Option<Var> = None;
    for i in (1..=l).rev() {
        let (oh, ow) = cfg.level_dims(i);
        if g.value(inp.f_f[i - 1]).chw()? != (cfg.channel(i), oh, ow) {
            return Err(Error::Shape(format!("fine feature level {i} has wrong shape")));
        }
        let coarse = roi(g, inp.f_c[i - 1], &inp.window, img_h, img_w, oh, ow)?;
        let mut parts = vec![skips[i - 1], coarse, inp.f_f[i - 1]];
        if let Some(up) = prev {
            parts.push(upsample2(g, up)?);
        }
        let f = fb(g, p, &format!("dec{i}"), &parts)?;
        features[i - 1] = f;
        prev = Some(f);
    }
    let depth = depth_head(g, p, "head.conv", features[0], cfg.depth_bounds)?;
    Ok(FusionOutput { depth, features })
}

/// Fused depth for one crop, computing the attended features from `f_c`.
#[allow(clippy::too_many_arguments)]
pub fn fusion_forward<T: Float>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &ModelConfig,
    crop_img: &Tensor<T>,
    d_c_crop: &Tensor<T>,
    d_guided: &Tensor<T>,
    f_c: &[Var],
    f_f: &[Var],
    window: Window,
    image: [usize; 2],
) -> Result<FusionOutput> {
    let f_g2l = g2l_pyramid(g, p, cfg, f_c)?;
    fusion_forward_with_g2l(
        g,
        p,
        cfg,
        &FusionInputs {
            crop_img,
            d_c_crop,
            d_guided,
            f_c,
            f_g2l: &f_g2l,
            f_f,
            window,
            image,
        },
    )
}
