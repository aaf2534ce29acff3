//! Base depth network, instantiated as both the coarse and the fine model:
//! a stride-2 convolutional encoder, a bilinear-upsampling decoder with
//! skip connections, and a bounded depth head.

use rand::Rng;

use super::config::ModelConfig;
use super::layers::{conv_relu, depth_head, upsample2};
use crate::error::{Error, Result};
use crate::nn::{Bound, Graph, ParamSet, Var};
use crate::tensor::{Float, Tensor};

/// Depth map `[h, w]` and decoder features, finest level first.
pub struct BaseOutput {
    pub depth: Var,
    pub features: Vec<Var>,
}

pub fn init_base_params<T: Float>(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamSet<T> {
    let mut p = ParamSet::new();
    let mut prev = 3;
    for i in 1..=cfg.levels {
        let c = cfg.channel(i);
        p.add_conv(&format!("enc{i}.down"), prev, c, 3, rng);
        p.add_conv(&format!("enc{i}.conv"), c, c, 3, rng);
        prev = c;
    }
    for i in (1..=cfg.levels).rev() {
        let c = cfg.channel(i);
        let cin = if i == cfg.levels { c } else { c + cfg.channel(i + 1) };
        p.add_conv(&format!("dec{i}.conv"), cin, c, 3, rng);
    }
    p.add_conv("head.conv", cfg.channel(1), 1, 3, rng);
    p
}

pub(crate) fn check_input<T: Float>(image: &Tensor<T>, channels: usize, cfg: &ModelConfig) -> Result<()> {
    let (c, h, w) = image.chw()?;
    if c != channels || [h, w] != cfg.patch {
        return Err(Error::Shape(format!(
            "expected input {channels}x{}x{}, got {c}x{h}x{w}",
            cfg.patch[0], cfg.patch[1]
        )));
    }
    if !image.all_finite() {
        return Err(Error::NonFinite("network input".into()));
    }
    Ok(())
}

/// Runs the base network on a `[3, h, w]` image whose dims equal the patch size.
pub fn base_forward<T: Float>(g: &mut Graph<T>, p: &Bound, cfg: &ModelConfig, image: &Tensor<T>) -> Result<BaseOutput> {
    check_input(image, 3, cfg)?;
    let x = g.constant(image.map(|v| v - T::from_f64(0.5)));
    let mut skips = Vec::with_capacity(cfg.levels);
    let mut h = x;
    for i in 1..=cfg.levels {
        h = conv_relu(g, p, &format!("enc{i}.down"), h, 2)?;
        h = conv_relu(g, p, &format!("enc{i}.conv"), h, 1)?;
        skips.push(h);
    }
    let mut features = vec![h; cfg.levels];
    let mut d = conv_relu(g, p, &format!("dec{}.conv", cfg.levels), skips[cfg.levels - 1], 1)?;
    features[cfg.levels - 1] = d;
    for i in (1..cfg.levels).rev() {
        let up = upsample2(g, d)?;
        let cat = g.concat(&[up, skips[i - 1]])?;
        d = conv_relu(g, p, &format!("dec{i}.conv"), cat, 1)?;
        features[i - 1] = d;
    }
    let depth = depth_head(g, p, "head.conv", features[0], cfg.depth_bounds)?;
    Ok(BaseOutput { depth, features })
}
