use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::kernels::resample_forward;
use crate::nn::Interp;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    /// Bilinear samples at output-pixel centers, border-clamped.
    Bilinear,
    /// Mean over the exact source footprint of each output pixel.
    Area,
}

/// Resizes a `[H, W]` or `[C, H, W]` map to `out_h×out_w`.
pub fn resize<T: Float>(map: &Tensor<T>, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!("resize target {out_h}x{out_w}")));
    }
    let (c, h, w) = map.chw()?;
    if (h, w) == (out_h, out_w) {
        return Ok(map.clone());
    }
    let data = match mode {
        ResizeMode::Bilinear => {
            let rows = Interp::<T>::resize(h, out_h);
            let cols = Interp::<T>::resize(w, out_w);
            resample_forward(map.data(), c, &rows, &cols)
        }
        ResizeMode::Area => area_resample(map.data(), c, h, w, out_h, out_w),
    };
    let shape: Vec<usize> = if map.shape().len() == 2 {
        vec![out_h, out_w]
    } else {
        vec![c, out_h, out_w]
    };
    Tensor::from_vec(&shape, data)
}

/// Sparse weights `(source index, weight)` of every output cell when
/// `in_len` source cells are averaged into `out_len` equal footprints.
fn area_weights(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(in_len);
            (first..last)
                .filter_map(|i| {
                    let overlap = hi.min((i + 1) as f64) - lo.max(i as f64);
                    (overlap > 0.0).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

fn area_resample<T: Float>(x: &[T], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let rows = area_weights(h, oh);
    let cols = area_weights(w, ow);
    let mut out = vec![T::ZERO; c * oh * ow];
    let mut acc = vec![0.0f64; w];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for (i, rw) in rows.iter().enumerate() {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for &(r, wr) in rw {
                for (a, v) in acc.iter_mut().zip(&plane[r * w..(r + 1) * w]) {
                    *a += wr * v.to_f64();
                }
            }
            for (j, cw) in cols.iter().enumerate() {
                let v: f64 = cw.iter().map(|&(k, wk)| wk * acc[k]).sum();
                out[(ch * oh + i) * ow + j] = T::from_f64(v);
            }
        }
    }
    out
}
