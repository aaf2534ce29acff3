//! Global-to-local module: two transformer blocks over each coarse feature
//! level, the first attending inside regular windows and the second inside
//! windows cyclically shifted by half a window.

use std::sync::Arc;

use rand::Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Bound, Graph, ParamSet, Var, WindowLayout};
use crate::tensor::Float;

pub fn init_g2l_params<T: Float>(cfg: &ModelConfig, level: usize, rng: &mut impl Rng) -> ParamSet<T> {
    let c = cfg.channel(level);
    let hidden = cfg.mlp_hidden(c);
    let mut p = ParamSet::new();
    for blk in 0..2 {
        let pre = format!("blk{blk}");
        p.add_layer_norm(&format!("{pre}.ln1"), c);
        p.add_linear(&format!("{pre}.qkv"), c, 3 * c, rng);
        p.add_linear(&format!("{pre}.proj"), c, c, rng);
        p.add_layer_norm(&format!("{pre}.ln2"), c);
        p.add_linear(&format!("{pre}.fc1"), c, hidden, rng);
        p.add_linear(&format!("{pre}.fc2"), hidden, c, rng);
    }
    p
}

fn lin<T: Float>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    g.linear(x, w, b)
}

/// One pre-norm transformer block over `[N, C]` tokens of an `h×w` grid.
#[allow(clippy::too_many_arguments)]
pub fn attention_block<T: Float>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    tokens: Var,
    h: usize,
    w: usize,
    window: usize,
    shift: usize,
    heads: usize,
) -> Result<Var> {
    let ln1 = g.layer_norm(
        tokens,
        p.get(&format!("{prefix}.ln1.gamma"))?,
        p.get(&format!("{prefix}.ln1.beta"))?,
    )?;
    let qkv = lin(g, p, &format!("{prefix}.qkv"), ln1)?;
    let layout = Arc::new(WindowLayout::new(h, w, window, shift));
    let att = g.window_attention(qkv, heads, layout)?;
    let att = lin(g, p, &format!("{prefix}.proj"), att)?;
    let x = g.add(tokens, att)?;
    let ln2 = g.layer_norm(
        x,
        p.get(&format!("{prefix}.ln2.gamma"))?,
        p.get(&format!("{prefix}.ln2.beta"))?,
    )?;
    let hid = lin(g, p, &format!("{prefix}.fc1"), ln2)?;
    let hid = g.gelu(hid);
    let mlp = lin(g, p, &format!("{prefix}.fc2"), hid)?;
    g.add(x, mlp)
}

/// Shape-preserving G2L transform of one `[C, H, W]` level. With `shifted`
/// false only the regular-window block runs.
pub fn g2l_forward_with<T: Float>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    cfg: &ModelConfig,
    feature: Var,
    shifted: bool,
) -> Result<Var> {
    let (c, h, w) = g.value(feature).chw()?;
    let win = cfg.g2l_window;
    if win == 0 || h % win != 0 || w % win != 0 {
        return Err(Error::NotDivisible {
            axis: if win == 0 || h % win != 0 { "height" } else { "width" },
            size: if win == 0 || h % win != 0 { h } else { w },
            divisor: win,
        });
    }
    let flat = g.reshape(feature, &[c, h * w])?;
    let mut tokens = g.transpose(flat)?;
    tokens = attention_block(g, p, &format!("{prefix}blk0"), tokens, h, w, win, 0, cfg.g2l_heads)?;
    if shifted {
        tokens = attention_block(g, p, &format!("{prefix}blk1"), tokens, h, w, win, win / 2, cfg.g2l_heads)?;
    }
    let back = g.transpose(tokens)?;
    g.reshape(back, &[c, h, w])
}

/// Regular-window block followed by the shifted-window block.
pub fn g2l_forward<T: Float>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    cfg: &ModelConfig,
    feature: Var,
) -> Result<Var> {
    g2l_forward_with(g, p, prefix, cfg, feature, true)
}
