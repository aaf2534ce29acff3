//! Depth accuracy, edge sharpness and cross-patch consistency metrics.

use serde::{Deserialize, Serialize};

use crate::dataio::{resize, ResizeMode};
use crate::error::{Error, Result};
use crate::geometry::{half_overlap_pairs, intersect, Window};
use crate::tensor::Tensor;

/// Ground-truth depths outside this range (meters) are not evaluated.
pub const DEFAULT_DEPTH_CAP: (f64, f64) = (1e-3, 80.0);
/// Log-depth gradient above which a pixel counts as an edge.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardMetrics {
    /// Percentage of pixels with `max(d/d̂, d̂/d) < 1.25`.
    pub delta1: f64,
    pub rel: f64,
    pub rms: f64,
    /// Scale-invariant log error, ×100.
    pub silog: f64,
    pub n_pixels: usize,
}

/// Pixels that are valid in `mask` with ground truth inside `cap`.
pub fn evaluated_pixels(gt: &Tensor<f32>, mask: &[bool], cap: (f64, f64)) -> Vec<usize> {
    gt.data()
        .iter()
        .zip(mask)
        .enumerate()
        .filter(|(_, (&d, &m))| m && (d as f64) > cap.0 && (d as f64) <= cap.1)
        .map(|(i, _)| i)
        .collect()
}

/// δ1, REL, RMS and SiLog over the evaluated pixels. `pred` is resized
/// bilinearly to the ground-truth resolution first if needed.
pub fn standard_metrics(
    pred: &Tensor<f32>,
    gt: &Tensor<f32>,
    mask: &[bool],
    cap: (f64, f64),
) -> Result<StandardMetrics> {
    let (h, w) = gt.hw()?;
    if mask.len() != h * w {
        return Err(Error::Shape(format!("mask of {} for {h}x{w} depth", mask.len())));
    }
    let pred = if pred.hw()? != (h, w) {
        resize(pred, h, w, ResizeMode::Bilinear)?
    } else {
        pred.clone()
    };
    let idx = evaluated_pixels(gt, mask, cap);
    if idx.is_empty() {
        return Err(Error::Empty(format!("no ground-truth pixels inside cap {cap:?}")));
    }
    let (p, g) = (pred.data(), gt.data());
    let (mut hits, mut rel, mut sq, mut e1, mut e2) = (0usize, 0.0, 0.0, 0.0, 0.0);
    for &i in &idx {
        let (d_hat, d) = (p[i] as f64, g[i] as f64);
        if !(d_hat > 0.0 && d_hat.is_finite()) {
            return Err(Error::InvalidArgument(format!("prediction {d_hat} at pixel {i}")));
        }
        if (d / d_hat).max(d_hat / d) < 1.25 {
            hits += 1;
        }
        rel += (d - d_hat).abs() / d;
        sq += (d - d_hat) * (d - d_hat);
        let e = d_hat.ln() - d.ln();
        e1 += e;
        e2 += e * e;
    }
    let n = idx.len() as f64;
    Ok(StandardMetrics {
        delta1: 100.0 * hits as f64 / n,
        rel: rel / n,
        rms: (sq / n).sqrt(),
        silog: (e2 / n - (e1 / n) * (e1 / n)).abs().sqrt() * 100.0,
        n_pixels: idx.len(),
    })
}

/// Pixels where the larger of the horizontal and vertical central
/// differences of log depth exceeds `threshold`. Differences reaching past
/// the border use the clamped neighbor.
pub fn edge_mask(gt: &Tensor<f32>, threshold: f64) -> Result<Vec<bool>> {
    let (h, w) = gt.hw()?;
    let log: Vec<f64> = gt.data().iter().map(|&d| (d as f64).max(1e-12).ln()).collect();
    let at = |y: usize, x: usize| log[y * w + x];
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let gx = (at(y, (x + 1).min(w - 1)) - at(y, x.saturating_sub(1))) / 2.0;
            let gy = (at((y + 1).min(h - 1), x) - at(y.saturating_sub(1), x)) / 2.0;
            out[y * w + x] = gx.abs().max(gy.abs()) > threshold;
        }
    }
    Ok(out)
}

/// Soft edge error: mean over edge pixels `p` of the smallest
/// `|pred(q) − gt(p)|` among the 3×3 neighbors `q` of `p`.
pub fn see(pred: &Tensor<f32>, gt: &Tensor<f32>, edges: &[bool]) -> Result<f64> {
    let (h, w) = gt.hw()?;
    if pred.hw()? != (h, w) || edges.len() != h * w {
        return Err(Error::Shape(format!("see: pred {:?}, gt {h}x{w}, mask {}", pred.shape(), edges.len())));
    }
    let (p, g) = (pred.data(), gt.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !edges[y * w + x] {
                continue;
            }
            let target = g[y * w + x] as f64;
            let mut best = f64::INFINITY;
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    best = best.min((p[yy * w + xx] as f64 - target).abs());
                }
            }
            total += best;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("see: edge mask is empty".into()));
    }
    Ok(total / count as f64)
}

/// Mean absolute difference of two patch predictions on their shared
/// region.
pub fn pair_disagreement(a: &Window, pa: &Tensor<f32>, b: &Window, pb: &Tensor<f32>) -> Result<f64> {
    let omega = intersect(a, b)
        .ok_or_else(|| Error::Empty(format!("windows {a} and {b} do not overlap")))?
        .region;
    let la = a.local(&omega).expect("intersection lies inside a");
    let lb = b.local(&omega).expect("intersection lies inside b");
    for (win, p) in [(a, pa), (b, pb)] {
        if p.hw()? != (win.h, win.w) {
            return Err(Error::Shape(format!("prediction {:?} for window {win}", p.shape())));
        }
    }
    let mut total = 0.0;
    for y in 0..omega.h {
        for x in 0..omega.w {
            total += (pa.at2(la.y0 + y, la.x0 + x) as f64 - pb.at2(lb.y0 + y, lb.x0 + x) as f64).abs();
        }
    }
    Ok(total / omega.area() as f64)
}

/// Mean of [`pair_disagreement`] over `pairs` of indices into `windows`,
/// where `predictions[i]` is the patch prediction for `windows[i]`.
pub fn ce_over_pairs(windows: &[Window], predictions: &[Tensor<f32>], pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("consistency error needs at least one pair".into()));
    }
    let mut total = 0.0;
    for &(i, j) in pairs {
        total += pair_disagreement(&windows[i], &predictions[i], &windows[j], &predictions[j])?;
    }
    Ok(total / pairs.len() as f64)
}

/// Consistency error: `predict` is called once per window of the
/// half-overlap lattice (in lattice order) and the mean disagreement over
/// horizontally and vertically adjacent pairs is returned.
pub fn ce<F>(mut predict: F, img_h: usize, img_w: usize, patch_h: usize, patch_w: usize) -> Result<f64>
where
    F: FnMut(&Window) -> Result<Tensor<f32>>,
{
    let (windows, pairs) = half_overlap_pairs(img_h, img_w, patch_h, patch_w)?;
    let predictions = windows.iter().map(&mut predict).collect::<Result<Vec<_>>>()?;
    ce_over_pairs(&windows, &predictions, &pairs)
}

/// One evaluated image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub id: String,
    pub method: String,
    pub delta1: f64,
    pub rel: f64,
    pub rms: f64,
    pub silog: f64,
    pub see: f64,
    pub ce: Option<f64>,
    pub n_pixels: usize,
    pub depth_cap: (f64, f64),
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "id,method,delta1,rel,rms,silog,see,ce";

    /// Evaluates one prediction. SEE is 0 when the ground truth has no edges.
    pub fn evaluate(
        id: &str,
        method: &str,
        pred: &Tensor<f32>,
        gt: &Tensor<f32>,
        mask: &[bool],
        cap: (f64, f64),
        ce: Option<f64>,
    ) -> Result<Self> {
        let m = standard_metrics(pred, gt, mask, cap)?;
        let (h, w) = gt.hw()?;
        let pred = if pred.hw()? != (h, w) {
            resize(pred, h, w, ResizeMode::Bilinear)?
        } else {
            pred.clone()
        };
        let edges: Vec<bool> = edge_mask(gt, DEFAULT_EDGE_THRESHOLD)?
            .into_iter()
            .zip(mask)
            .map(|(e, &m)| e && m)
            .collect();
        let see = match see(&pred, gt, &edges) {
            Ok(v) => v,
            Err(Error::Empty(_)) => 0.0,
            Err(e) => return Err(e),
        };
        Ok(Self {
            id: id.to_string(),
            method: method.to_string(),
            delta1: m.delta1,
            rel: m.rel,
            rms: m.rms,
            silog: m.silog,
            see,
            ce,
            n_pixels: m.n_pixels,
            depth_cap: cap,
        })
    }

    pub fn csv_row(&self) -> String {
        let ce = self.ce.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.id, self.method, self.delta1, self.rel, self.rms, self.silog, self.see, ce
        )
    }
}

/// Per-method means of a set of reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub n_images: usize,
    pub delta1: f64,
    pub rel: f64,
    pub rms: f64,
    pub silog: f64,
    pub see: f64,
    pub ce: Option<f64>,
}

/// Aggregates reports per method, in order of first appearance.
pub fn summarize(reports: &[EvalReport]) -> Vec<MethodSummary> {
    let mut methods: Vec<&str> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let rs: Vec<&EvalReport> = reports.iter().filter(|r| r.method == m).collect();
            let n = rs.len() as f64;
            let mean = |f: fn(&EvalReport) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            let ces: Vec<f64> = rs.iter().filter_map(|r| r.ce).collect();
            MethodSummary {
                method: m.to_string(),
                n_images: rs.len(),
                delta1: mean(|r| r.delta1),
                rel: mean(|r| r.rel),
                rms: mean(|r| r.rms),
                silog: mean(|r| r.silog),
                see: mean(|r| r.see),
                ce: (ces.len() == rs.len() && !ces.is_empty()).then(|| ces.iter().sum::<f64>() / ces.len() as f64),
            }
        })
        .collect()
}
