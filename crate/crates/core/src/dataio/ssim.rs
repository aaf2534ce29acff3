use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side of the square averaging window.
pub const SSIM_WINDOW: usize = 8;
/// Samples whose reconstruction SSIM falls below this are excluded.
pub const SSIM_THRESHOLD: f64 = 0.7;

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Summed-area table with one row and column of zero padding.
struct Integral {
    w: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Self {
        let mut sums = vec![0.0; (h + 1) * (w + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(y * w + x);
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w: w + 1, sums }
    }

    fn window(&self, y: usize, x: usize, k: usize) -> f64 {
        let s = &self.sums;
        s[(y + k) * self.w + x + k] - s[y * self.w + x + k] - s[(y + k) * self.w + x] + s[y * self.w + x]
    }
}

/// Mean structural similarity of two grayscale maps over all 8×8 sliding
/// windows (population statistics, unit dynamic range). Maps smaller than
/// the window use a single window covering the map.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    let (h, w) = a.hw()?;
    if b.hw()? != (h, w) {
        return Err(Error::Shape(format!("ssim of {:?} and {:?}", a.shape(), b.shape())));
    }
    if h == 0 || w == 0 {
        return Err(Error::Empty("ssim of an empty map".into()));
    }
    let k = SSIM_WINDOW.min(h).min(w);
    let (da, db) = (a.data(), b.data());
    let sa = Integral::new(h, w, |i| da[i]);
    let sb = Integral::new(h, w, |i| db[i]);
    let saa = Integral::new(h, w, |i| da[i] * da[i]);
    let sbb = Integral::new(h, w, |i| db[i] * db[i]);
    let sab = Integral::new(h, w, |i| da[i] * db[i]);
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - k {
        for x in 0..=w - k {
            let ma = sa.window(y, x, k) / n;
            let mb = sb.window(y, x, k) / n;
            let va = saa.window(y, x, k) / n - ma * ma;
            let vb = sbb.window(y, x, k) / n - mb * mb;
            let cov = sab.window(y, x, k) / n - ma * mb;
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Luma of a `[3, H, W]` image.
pub fn grayscale(image: &Tensor<f32>) -> Result<Tensor<f64>> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::Shape(format!("grayscale needs 3 channels, got {c}")));
    }
    let d = image.data();
    let n = h * w;
    Ok(Tensor::from_fn(&[h, w], |i| {
        0.299 * d[i] as f64 + 0.587 * d[n + i] as f64 + 0.114 * d[2 * n + i] as f64
    }))
}

/// Samples row `row` at fractional column `x` with linear interpolation,
/// clamped to the row ends.
fn sample_row(row: &[f64], x: f64) -> f64 {
    let x = x.clamp(0.0, (row.len() - 1) as f64);
    let a = x.floor() as usize;
    let b = (a + 1).min(row.len() - 1);
    let t = x - a as f64;
    row[a] * (1.0 - t) + row[b] * t
}

/// Round-trip stereo check: renders a virtual right view from the image and
/// its depth (disparity `focal_baseline / depth` pixels, z-buffered forward
/// splatting, holes filled from the nearest row neighbor), reconstructs the
/// left view by backward warping, and returns the SSIM between the original
/// and reconstructed luma.
pub fn stereo_reconstruction_ssim(image: &Tensor<f32>, depth: &Tensor<f32>, focal_baseline: f64) -> Result<f64> {
    let gray = grayscale(image)?;
    let (h, w) = gray.hw()?;
    if depth.hw()? != (h, w) {
        return Err(Error::Shape("image and depth dims differ".into()));
    }
    let g = gray.data();
    let d = depth.data();
    let mut recon = vec![0.0; h * w];
    let mut right = vec![0.0; w];
    let mut zbuf = vec![f64::INFINITY; w];
    for y in 0..h {
        right.iter_mut().for_each(|v| *v = f64::NAN);
        zbuf.iter_mut().for_each(|v| *v = f64::INFINITY);
        for x in 0..w {
            let z = d[y * w + x] as f64;
            let xr = (x as f64 - focal_baseline / z).round();
            if xr >= 0.0 {
                let xr = xr as usize;
                if z < zbuf[xr] {
                    zbuf[xr] = z;
                    right[xr] = g[y * w + x];
                }
            }
        }
        fill_holes(&mut right);
        for x in 0..w {
            let z = d[y * w + x] as f64;
            recon[y * w + x] = sample_row(&right, x as f64 - focal_baseline / z);
        }
    }
    ssim(&gray, &Tensor::from_vec(&[h, w], recon)?)
}

/// Replaces NaN entries with the nearest valid entry, preferring the right
/// neighbor (disocclusions reveal background on that side).
fn fill_holes(row: &mut [f64]) {
    let n = row.len();
    let mut next = f64::NAN;
    let mut from_right = vec![f64::NAN; n];
    for x in (0..n).rev() {
        if !row[x].is_nan() {
            next = row[x];
        }
        from_right[x] = next;
    }
    let mut prev = 0.0;
    for x in 0..n {
        if row[x].is_nan() {
            row[x] = if from_right[x].is_nan() { prev } else { from_right[x] };
        }
        prev = row[x];
    }
}
