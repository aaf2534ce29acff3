//! Numeric kernels behind the graph operations. Every kernel works on a
//! single image laid out as `[C, H, W]` or on a token matrix `[N, C]`.

use crate::tensor::Float;

/// Static geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Some(Self {
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad,
            oh,
            ow,
        })
    }

    #[inline]
    pub fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    #[inline]
    pub fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// Range of output columns whose input column `ox*stride + kx - pad` is in bounds.
    #[inline]
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx {
            (self.pad - kx).div_ceil(self.stride)
        } else {
            0
        };
        // largest ox with ox*stride + kx - pad <= w - 1
        let limit = self.w + self.pad;
        let hi = if limit > kx {
            ((limit - kx - 1) / self.stride + 1).min(self.ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Unfolds `x` into a `[cin*k*k, oh*ow]` patch matrix.
pub fn im2col<T: Float>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let p = g.out_pixels();
    debug_assert_eq!(col.len(), g.patch_len() * p);
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.oh {
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].iter_mut().for_each(|v| *v = T::ZERO);
                    out_row[hi..].iter_mut().for_each(|v| *v = T::ZERO);
                    if g.stride == 1 {
                        let start = lo + kx - g.pad;
                        out_row[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            out_row[ox] = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Folds a patch-matrix gradient back onto the input (accumulating).
pub fn col2im<T: Float>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.out_pixels();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let in_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in lo..hi {
                        dst[ox * g.stride + kx - g.pad] += in_row[ox];
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Float>(x: &[T], w: &[T], b: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.out_pixels();
    let kk = g.patch_len();
    let mut col = vec![T::ZERO; kk * p];
    im2col(x, g, &mut col);
    let mut y = vec![T::ZERO; g.cout * p];
    for (o, row) in y.chunks_mut(p).enumerate() {
        row.iter_mut().for_each(|v| *v = b[o]);
    }
    T::gemm(g.cout, kk, p, w, false, &col, false, &mut y, true);
    y
}

/// Returns `(dx, dw, db)`; `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward<T: Float>(
    x: &[T],
    w: &[T],
    dy: &[T],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let p = g.out_pixels();
    let kk = g.patch_len();
    let (dw, db) = if need_dw {
        let mut col = vec![T::ZERO; kk * p];
        im2col(x, g, &mut col);
        let mut dw = vec![T::ZERO; g.cout * kk];
        T::gemm(g.cout, p, kk, dy, false, &col, true, &mut dw, false);
        let db = dy.chunks(p).map(|r| r.iter().copied().sum()).collect();
        (Some(dw), Some(db))
    } else {
        (None, None)
    };
    let dx = need_dx.then(|| {
        let mut dcol = vec![T::ZERO; kk * p];
        T::gemm(kk, g.cout, p, w, true, dy, false, &mut dcol, false);
        let mut dx = vec![T::ZERO; g.cin * g.h * g.w];
        col2im(&dcol, g, &mut dx);
        dx
    });
    (dx, dw, db)
}

/// 2×2 max pooling with stride 2; returns the pooled map and flat argmax indices.
pub fn max_pool2<T: Float>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (ch * h + 2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Separable linear-interpolation weights along one axis.
///
/// Output sample `j` sits at the center of cell `j` of a grid spanning
/// `[start, start + extent)` in input pixel units; positions are clamped to
/// the valid input range.
#[derive(Clone, Debug)]
pub struct Interp<T> {
    pub in_len: usize,
    pub out_len: usize,
    pub i0: Vec<usize>,
    pub i1: Vec<usize>,
    pub w0: Vec<T>,
    pub w1: Vec<T>,
}

impl<T: Float> Interp<T> {
    pub fn linear(in_len: usize, out_len: usize, start: f64, extent: f64) -> Self {
        let mut i0 = Vec::with_capacity(out_len);
        let mut i1 = Vec::with_capacity(out_len);
        let mut w0 = Vec::with_capacity(out_len);
        let mut w1 = Vec::with_capacity(out_len);
        let max = (in_len - 1) as f64;
        for j in 0..out_len {
            let u = start + (j as f64 + 0.5) * extent / out_len as f64 - 0.5;
            let u = u.clamp(0.0, max);
            let a = u.floor() as usize;
            let b = (a + 1).min(in_len - 1);
            let t = u - a as f64;
            i0.push(a);
            i1.push(b);
            w0.push(T::from_f64(1.0 - t));
            w1.push(T::from_f64(t));
        }
        Self {
            in_len,
            out_len,
            i0,
            i1,
            w0,
            w1,
        }
    }

    /// Full-extent resampling from `in_len` to `out_len` samples.
    pub fn resize(in_len: usize, out_len: usize) -> Self {
        Self::linear(in_len, out_len, 0.0, in_len as f64)
    }
}

pub fn resample_forward<T: Float>(x: &[T], c: usize, rows: &Interp<T>, cols: &Interp<T>) -> Vec<T> {
    let (h, w) = (rows.in_len, cols.in_len);
    let (oh, ow) = (rows.out_len, cols.out_len);
    let mut tmp = vec![T::ZERO; w];
    let mut out = vec![T::ZERO; c * oh * ow];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            let (r0, r1) = (&plane[rows.i0[i] * w..][..w], &plane[rows.i1[i] * w..][..w]);
            let (a, b) = (rows.w0[i], rows.w1[i]);
            for ((t, &p), &q) in tmp.iter_mut().zip(r0).zip(r1) {
                *t = a * p + b * q;
            }
            let dst = &mut out[(ch * oh + i) * ow..][..ow];
            for (j, d) in dst.iter_mut().enumerate() {
                *d = cols.w0[j] * tmp[cols.i0[j]] + cols.w1[j] * tmp[cols.i1[j]];
            }
        }
    }
    out
}

pub fn resample_backward<T: Float>(dy: &[T], c: usize, rows: &Interp<T>, cols: &Interp<T>) -> Vec<T> {
    let (h, w) = (rows.in_len, cols.in_len);
    let (oh, ow) = (rows.out_len, cols.out_len);
    let mut dtmp = vec![T::ZERO; w];
    let mut dx = vec![T::ZERO; c * h * w];
    for ch in 0..c {
        for i in 0..oh {
            dtmp.iter_mut().for_each(|v| *v = T::ZERO);
            let src = &dy[(ch * oh + i) * ow..][..ow];
            for (j, &g) in src.iter().enumerate() {
                dtmp[cols.i0[j]] += cols.w0[j] * g;
                dtmp[cols.i1[j]] += cols.w1[j] * g;
            }
            let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
            let (a, b) = (rows.w0[i], rows.w1[i]);
            let r0 = rows.i0[i] * w;
            for (k, &t) in dtmp.iter().enumerate() {
                plane[r0 + k] += a * t;
            }
            let r1 = rows.i1[i] * w;
            for (k, &t) in dtmp.iter().enumerate() {
                plane[r1 + k] += b * t;
            }
        }
    }
    dx
}

pub fn layer_norm_forward<T: Float>(
    x: &[T],
    c: usize,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = x.len() / c;
    let mut y = vec![T::ZERO; x.len()];
    let mut xhat = vec![T::ZERO; x.len()];
    let mut rstd = Vec::with_capacity(n);
    let inv_c = T::from_f64(1.0 / c as f64);
    for t in 0..n {
        let row = &x[t * c..(t + 1) * c];
        let mean = row.iter().copied().sum::<T>() * inv_c;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
        let r = T::ONE / (var + T::from_f64(eps)).sqrt();
        rstd.push(r);
        for j in 0..c {
            let xh = (row[j] - mean) * r;
            xhat[t * c + j] = xh;
            y[t * c + j] = xh * gamma[j] + beta[j];
        }
    }
    (y, xhat, rstd)
}

pub fn layer_norm_backward<T: Float>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gamma: &[T],
    c: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = dy.len() / c;
    let mut dx = vec![T::ZERO; dy.len()];
    let mut dgamma = vec![T::ZERO; c];
    let mut dbeta = vec![T::ZERO; c];
    let inv_c = T::from_f64(1.0 / c as f64);
    let mut dxhat = vec![T::ZERO; c];
    for t in 0..n {
        let g = &dy[t * c..(t + 1) * c];
        let xh = &xhat[t * c..(t + 1) * c];
        let mut s1 = T::ZERO;
        let mut s2 = T::ZERO;
        for j in 0..c {
            dgamma[j] += g[j] * xh[j];
            dbeta[j] += g[j];
            dxhat[j] = g[j] * gamma[j];
            s1 += dxhat[j];
            s2 += dxhat[j] * xh[j];
        }
        for j in 0..c {
            dx[t * c + j] = rstd[t] * (dxhat[j] - inv_c * s1 - xh[j] * inv_c * s2);
        }
    }
    (dx, dgamma, dbeta)
}

/// Token layout of a (possibly cyclically shifted) window partition.
#[derive(Clone, Debug)]
pub struct WindowLayout {
    pub h: usize,
    pub w: usize,
    pub window: usize,
    pub shift: usize,
    /// Original token index of every position of every window, window-major.
    pub tokens: Vec<Vec<usize>>,
    /// Region label per position; attention is restricted to equal labels.
    pub labels: Vec<Vec<u8>>,
}

impl WindowLayout {
    /// Partitions an `h×w` token grid into `window×window` windows after
    /// rolling the grid by `-shift` along both axes.
    pub fn new(h: usize, w: usize, window: usize, shift: usize) -> Self {
        let region = |p: usize, len: usize| -> u8 {
            if shift == 0 || p < len - window {
                0
            } else if p < len - shift {
                1
            } else {
                2
            }
        };
        let mut tokens = Vec::new();
        let mut labels = Vec::new();
        for wy in 0..h / window {
            for wx in 0..w / window {
                let mut t = Vec::with_capacity(window * window);
                let mut l = Vec::with_capacity(window * window);
                for iy in 0..window {
                    for ix in 0..window {
                        let (sy, sx) = (wy * window + iy, wx * window + ix);
                        let (oy, ox) = ((sy + shift) % h, (sx + shift) % w);
                        t.push(oy * w + ox);
                        l.push(region(sy, h) * 3 + region(sx, w));
                    }
                }
                tokens.push(t);
                labels.push(l);
            }
        }
        Self {
            h,
            w,
            window,
            shift,
            tokens,
            labels,
        }
    }
}

/// Multi-head attention inside each window. `qkv` is `[N, 3C]`; returns
/// the `[N, C]` output and the attention probabilities for the backward pass.
pub fn window_attention_forward<T: Float>(
    qkv: &[T],
    c: usize,
    heads: usize,
    layout: &WindowLayout,
) -> (Vec<T>, Vec<T>) {
    let n = qkv.len() / (3 * c);
    let dh = c / heads;
    let t = layout.window * layout.window;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut out = vec![T::ZERO; n * c];
    let mut probs = vec![T::ZERO; layout.tokens.len() * heads * t * t];
    let mut row = vec![T::ZERO; t];
    for (wi, (toks, labs)) in layout.tokens.iter().zip(&layout.labels).enumerate() {
        for hd in 0..heads {
            let base = (wi * heads + hd) * t * t;
            for i in 0..t {
                let q = &qkv[toks[i] * 3 * c + hd * dh..][..dh];
                let mut mx = T::from_f64(f64::NEG_INFINITY);
                for j in 0..t {
                    if labs[i] != labs[j] {
                        row[j] = T::from_f64(f64::NEG_INFINITY);
                        continue;
                    }
                    let k = &qkv[toks[j] * 3 * c + c + hd * dh..][..dh];
                    let s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    row[j] = s;
                    mx = mx.max(s);
                }
                let mut z = T::ZERO;
                for r in row.iter_mut() {
                    let e = if r.is_finite() { (*r - mx).exp() } else { T::ZERO };
                    *r = e;
                    z += e;
                }
                let p = &mut probs[base + i * t..][..t];
                for j in 0..t {
                    p[j] = row[j] / z;
                }
                let o = &mut out[toks[i] * c + hd * dh..][..dh];
                for j in 0..t {
                    let pj = p[j];
                    if pj == T::ZERO {
                        continue;
                    }
                    let v = &qkv[toks[j] * 3 * c + 2 * c + hd * dh..][..dh];
                    for d in 0..dh {
                        o[d] += pj * v[d];
                    }
                }
            }
        }
    }
    (out, probs)
}

pub fn window_attention_backward<T: Float>(
    qkv: &[T],
    probs: &[T],
    dout: &[T],
    c: usize,
    heads: usize,
    layout: &WindowLayout,
) -> Vec<T> {
    let dh = c / heads;
    let t = layout.window * layout.window;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut dqkv = vec![T::ZERO; qkv.len()];
    let mut ds = vec![T::ZERO; t * t];
    for (wi, toks) in layout.tokens.iter().enumerate() {
        for hd in 0..heads {
            let p = &probs[(wi * heads + hd) * t * t..][..t * t];
            for i in 0..t {
                let go = &dout[toks[i] * c + hd * dh..][..dh];
                let mut dot = T::ZERO;
                for j in 0..t {
                    let v = &qkv[toks[j] * 3 * c + 2 * c + hd * dh..][..dh];
                    let dp = go.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>();
                    ds[i * t + j] = dp;
                    dot += p[i * t + j] * dp;
                }
                for j in 0..t {
                    ds[i * t + j] = p[i * t + j] * (ds[i * t + j] - dot);
                }
            }
            for i in 0..t {
                for j in 0..t {
                    let pij = p[i * t + j];
                    let sij = ds[i * t + j] * scale;
                    if pij == T::ZERO && sij == T::ZERO {
                        continue;
                    }
                    let (ti, tj) = (toks[i], toks[j]);
                    for d in 0..dh {
                        let go = dout[ti * c + hd * dh + d];
                        dqkv[tj * 3 * c + 2 * c + hd * dh + d] += pij * go;
                        let qi = qkv[ti * 3 * c + hd * dh + d];
                        let kj = qkv[tj * 3 * c + c + hd * dh + d];
                        dqkv[ti * 3 * c + hd * dh + d] += sij * kj;
                        dqkv[tj * 3 * c + c + hd * dh + d] += sij * qi;
                    }
                }
            }
        }
    }
    dqkv
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[inline]
pub fn gelu<T: Float>(x: T) -> T {
    let k = T::from_f64(GELU_K);
    let c = T::from_f64(GELU_C);
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (k * (x + c * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Float>(x: T) -> T {
    let k = T::from_f64(GELU_K);
    let c = T::from_f64(GELU_C);
    let half = T::from_f64(0.5);
    let u = k * (x + c * x * x * x);
    let th = u.tanh();
    let du = k * (T::ONE + T::from_f64(3.0) * c * x * x);
    half * (T::ONE + th) + half * x * (T::ONE - th * th) * du
}

#[inline]
pub fn sigmoid<T: Float>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut y = vec![0.0; g.cout * g.oh * g.ow];
        for o in 0..g.cout {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut s = b[o];
                    for c in 0..g.cin {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                s += w[((o * g.cin + c) * g.k + ky) * g.k + kx]
                                    * x[(c * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    y[(o * g.oh + oy) * g.ow + ox] = s;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loop() {
        for &(stride, pad, h, w) in &[(1, 1, 5, 7), (2, 1, 8, 6), (2, 1, 7, 9), (1, 0, 4, 4)] {
            let g = ConvGeom::new(3, h, w, 4, 3, stride, pad).unwrap();
            let x: Vec<f64> = (0..3 * h * w).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let wt: Vec<f64> = (0..4 * 27).map(|i| ((i * 13 % 7) as f64) * 0.1 - 0.3).collect();
            let b = vec![0.5, -0.5, 0.0, 1.0];
            let fast = conv2d_forward(&x, &wt, &b, &g);
            let slow = naive_conv(&x, &wt, &b, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::new(2, 6, 5, 1, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..60).map(|i| (i as f64).sin()).collect();
        let r: Vec<f64> = (0..g.patch_len() * g.out_pixels()).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut col = vec![0.0; r.len()];
        im2col(&x, &g, &mut col);
        let lhs: f64 = col.iter().zip(&r).map(|(a, b)| a * b).sum();
        let mut dx = vec![0.0; 60];
        col2im(&r, &g, &mut dx);
        let rhs: f64 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn window_partition_counts() {
        let l = WindowLayout::new(8, 8, 4, 0);
        assert_eq!(l.tokens.len(), 4);
        assert!(l.tokens.iter().all(|t| t.len() == 16));
        let mut all: Vec<usize> = l.tokens.concat();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
        let s = WindowLayout::new(8, 8, 4, 2);
        let mut all: Vec<usize> = s.tokens.concat();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
        // the last shifted window mixes wrapped regions
        assert!(s.labels[3].iter().any(|&l| l != s.labels[3][0]));
    }

    #[test]
    fn interp_identity_and_upsample() {
        let id = Interp::<f64>::resize(5, 5);
        assert!(id.w1.iter().all(|&w| w == 0.0));
        assert_eq!(id.i0, vec![0, 1, 2, 3, 4]);
        let up = Interp::<f64>::resize(2, 4);
        // centers at -0.25, 0.25, 0.75, 1.25 -> clamped
        assert_eq!(up.i0, vec![0, 0, 0, 1]);
        assert!((up.w1[1] - 0.25).abs() < 1e-12);
        assert!((up.w1[2] - 0.75).abs() < 1e-12);
    }
}
