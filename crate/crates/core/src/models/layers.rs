//! Small building blocks shared by the networks.

use std::sync::Arc;

use crate::error::Result;
use crate::nn::{Bound, Graph, Interp, Var};
use crate::tensor::Float;

pub fn conv<T: Float>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    g.conv2d(x, w, b, stride, 1)
}

pub fn conv_relu<T: Float>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let y = conv(g, p, name, x, stride)?;
    Ok(g.relu(y))
}

/// 2× bilinear upsampling of a `[C, H, W]` map.
pub fn upsample2<T: Float>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let (_, h, w) = g.value(x).chw()?;
    g.resample(x, Arc::new(Interp::resize(h, 2 * h)), Arc::new(Interp::resize(w, 2 * w)))
}

/// Upsamples the finest decoder map to input resolution and maps it to a
/// `[h, w]` depth strictly inside `bounds`.
pub fn depth_head<T: Float>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var, bounds: (f64, f64)) -> Result<Var> {
    let up = upsample2(g, x)?;
    let logits = conv(g, p, name, up, 1)?;
    let d = g.sigmoid_log_range(logits, bounds.0, bounds.1);
    let (_, h, w) = g.value(d).chw()?;
    g.reshape(d, &[h, w])
}
