//! Brute-force reference implementations, written independently of the
//! library code they check.

use patchfusion::geometry::Window;
use patchfusion::Tensor;

pub struct Standard {
    pub delta1: f64,
    pub rel: f64,
    pub rms: f64,
    pub silog: f64,
}

pub fn standard_metrics(pred: &Tensor<f32>, gt: &Tensor<f32>, mask: &[bool], cap: (f64, f64)) -> Standard {
    let (h, w) = (gt.shape()[0], gt.shape()[1]);
    let mut n = 0.0;
    let (mut good, mut rel, mut sq, mut le, mut le2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let d = gt.at2(y, x) as f64;
            if !mask[y * w + x] || d <= cap.0 || d > cap.1 {
                continue;
            }
            let p = pred.at2(y, x) as f64;
            n += 1.0;
            let ratio = if d > p { d / p } else { p / d };
            if ratio < 1.25 {
                good += 1.0;
            }
            rel += ((d - p) / d).abs();
            sq += (d - p).powi(2);
            let e = (p / d).ln();
            le += e;
            le2 += e * e;
        }
    }
    Standard {
        delta1: good / n * 100.0,
        rel: rel / n,
        rms: (sq / n).sqrt(),
        silog: 100.0 * (le2 / n - (le / n).powi(2)).abs().sqrt(),
    }
}

pub fn see(pred: &Tensor<f32>, gt: &Tensor<f32>, edges: &[bool]) -> f64 {
    let (h, w) = (gt.shape()[0] as i64, gt.shape()[1] as i64);
    let mut total = 0.0;
    let mut n = 0.0;
    for y in 0..h {
        for x in 0..w {
            if !edges[(y * w + x) as usize] {
                continue;
            }
            let target = gt.at2(y as usize, x as usize) as f64;
            let mut errs = Vec::new();
            for dy in [-1i64, 0, 1] {
                for dx in [-1i64, 0, 1] {
                    let yy = (y + dy).clamp(0, h - 1) as usize;
                    let xx = (x + dx).clamp(0, w - 1) as usize;
                    errs.push((pred.at2(yy, xx) as f64 - target).abs());
                }
            }
            total += errs.into_iter().fold(f64::INFINITY, f64::min);
            n += 1.0;
        }
    }
    total / n
}

/// Enumerates every unordered pair of lattice windows, keeps those offset by
/// exactly half a patch along one axis, and averages the absolute
/// disagreement over image pixels covered by both.
pub fn ce(windows: &[Window], preds: &[Tensor<f32>]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0.0;
    for i in 0..windows.len() {
        for j in i + 1..windows.len() {
            let (a, b) = (windows[i], windows[j]);
            let dx = (a.x0 as i64 - b.x0 as i64).abs();
            let dy = (a.y0 as i64 - b.y0 as i64).abs();
            let adjacent = (dx == a.w as i64 / 2 && dy == 0) || (dy == a.h as i64 / 2 && dx == 0);
            if !adjacent {
                continue;
            }
            let (mut s, mut n) = (0.0, 0.0);
            for y in 0..10_000 {
                if y >= a.y0 + a.h && y >= b.y0 + b.h {
                    break;
                }
                for x in 0..10_000 {
                    if x >= a.x0 + a.w && x >= b.x0 + b.w {
                        break;
                    }
                    let in_a = x >= a.x0 && x < a.x0 + a.w && y >= a.y0 && y < a.y0 + a.h;
                    let in_b = x >= b.x0 && x < b.x0 + b.w && y >= b.y0 && y < b.y0 + b.h;
                    if in_a && in_b {
                        let pa = preds[i].at2(y - a.y0, x - a.x0) as f64;
                        let pb = preds[j].at2(y - b.y0, x - b.x0) as f64;
                        s += (pa - pb).abs();
                        n += 1.0;
                    }
                }
            }
            total += s / n;
            pairs += 1.0;
        }
    }
    total / pairs
}

/// Feature and depth terms of the overlap consistency loss by explicit
/// loops over global cells of the shared region.
pub fn consistency(
    f1: &[Tensor<f64>],
    f2: &[Tensor<f64>],
    d1: &Tensor<f64>,
    d2: &Tensor<f64>,
    w1: &Window,
    w2: &Window,
) -> (f64, f64) {
    let x0 = w1.x0.max(w2.x0);
    let y0 = w1.y0.max(w2.y0);
    let x1 = (w1.x0 + w1.w).min(w2.x0 + w2.w);
    let y1 = (w1.y0 + w1.h).min(w2.y0 + w2.h);
    let mut feat = 0.0;
    for (a, b) in f1.iter().zip(f2) {
        let (c, h) = (a.shape()[0], a.shape()[1]);
        let s = w1.h / h;
        let (mut sum, mut n) = (0.0, 0.0);
        for ch in 0..c {
            for gy in y0 / s..y1 / s {
                for gx in x0 / s..x1 / s {
                    let va = a.at3(ch, gy - w1.y0 / s, gx - w1.x0 / s);
                    let vb = b.at3(ch, gy - w2.y0 / s, gx - w2.x0 / s);
                    sum += (va - vb) * (va - vb);
                    n += 1.0;
                }
            }
        }
        feat += sum / n;
    }
    let (mut sum, mut n) = (0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let diff = d1.at2(y - w1.y0, x - w1.x0) - d2.at2(y - w2.y0, x - w2.x0);
            sum += diff * diff;
            n += 1.0;
        }
    }
    (feat, sum / n)
}

/// Least squares for `s·f + t ≈ c` by Cramer's rule on the normal equations.
pub fn scale_shift(f: &Tensor<f32>, c: &Tensor<f32>, mask: &[bool]) -> (f64, f64) {
    let (mut sff, mut sf, mut n, mut sfc, mut sc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..mask.len() {
        if mask[i] {
            let (a, b) = (f.data()[i] as f64, c.data()[i] as f64);
            sff += a * a;
            sf += a;
            n += 1.0;
            sfc += a * b;
            sc += b;
        }
    }
    let det = sff * n - sf * sf;
    ((sfc * n - sf * sc) / det, (sff * sc - sf * sfc) / det)
}

/// Visit counts of every pixel for a list of windows.
pub fn coverage(windows: &[Window], h: usize, w: usize) -> Vec<u32> {
    let mut c = vec![0; h * w];
    for win in windows {
        for y in 0..h {
            for x in 0..w {
                if x >= win.x0 && x < win.x0 + win.w && y >= win.y0 && y < win.y0 + win.h {
                    c[y * w + x] += 1;
                }
            }
        }
    }
    c
}
