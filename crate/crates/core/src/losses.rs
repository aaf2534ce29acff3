//! Scale-invariant depth loss, the overlap consistency loss and their
//! combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{intersect, scale_window, Window};
use crate::nn::{Graph, Var};
use crate::tensor::{Float, Tensor};

/// Constants of the scale-invariant log loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SilogParams {
    pub alpha: f64,
    pub lambda: f64,
}

impl Default for SilogParams {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            lambda: 0.85,
        }
    }
}

/// Below this variance term the square root is treated as flat.
const SILOG_EPS: f64 = 1e-12;

fn silog_parts<T: Float>(pred: &[T], gt: &[T], mask: &[bool], params: SilogParams) -> Result<(f64, Vec<T>)> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(Error::Shape(format!(
            "silog: pred {}, gt {}, mask {}",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    let mut errs = Vec::new();
    for ((&p, &g), &m) in pred.iter().zip(gt).zip(mask) {
        if !m {
            continue;
        }
        let (p, g) = (p.to_f64(), g.to_f64());
        if !(p > 0.0 && g > 0.0) {
            return Err(Error::InvalidArgument(format!("silog needs positive depths, got {p} / {g}")));
        }
        errs.push(p.ln() - g.ln());
    }
    if errs.is_empty() {
        return Err(Error::Empty("silog mask selects no pixels".into()));
    }
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    // centered form of mean(e²) − λ·mean(e)², exact zero for constant e
    let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    let d = var + (1.0 - params.lambda) * mean * mean;
    let value = params.alpha * d.max(0.0).sqrt();
    let mut grad = vec![T::ZERO; pred.len()];
    if d > SILOG_EPS {
        let outer = params.alpha / (2.0 * d.sqrt());
        let mut k = 0;
        for (i, &m) in mask.iter().enumerate() {
            if m {
                let de = (2.0 * errs[k] - 2.0 * params.lambda * mean) / n;
                grad[i] = T::from_f64(outer * de / pred[i].to_f64());
                k += 1;
            }
        }
    }
    Ok((value, grad))
}

/// `α·sqrt(mean(e²) − λ·mean(e)²)` with `e = ln pred − ln gt` over the mask.
pub fn silog_loss<T: Float>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &[bool], params: SilogParams) -> Result<f64> {
    silog_parts(pred.data(), gt.data(), mask, params).map(|(v, _)| v)
}

/// Graph node for [`silog_loss`] with respect to `pred`.
pub fn silog_loss_var<T: Float>(
    g: &mut Graph<T>,
    pred: Var,
    gt: &Tensor<T>,
    mask: &[bool],
    params: SilogParams,
) -> Result<Var> {
    if g.shape(pred) != gt.shape() {
        return Err(Error::Shape(format!("silog: pred {:?} vs gt {:?}", g.shape(pred), gt.shape())));
    }
    let (value, grad) = silog_parts(g.value(pred).data(), gt.data(), mask, params)?;
    let grad = Tensor::from_vec(gt.shape(), grad)?;
    g.reduce(T::from_f64(value), vec![(pred, grad)])
}

/// Mean squared difference of two equally shaped nodes.
fn mse_var<T: Float>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape(format!("mse of {:?} and {:?}", g.shape(a), g.shape(b))));
    }
    let (va, vb) = (g.value(a), g.value(b));
    let n = va.numel() as f64;
    let mut total = 0.0;
    let diff: Vec<f64> = va
        .data()
        .iter()
        .zip(vb.data())
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            total += d * d;
            d
        })
        .collect();
    let shape = va.shape().to_vec();
    let ga = Tensor::from_vec(&shape, diff.iter().map(|d| T::from_f64(2.0 * d / n)).collect())?;
    let gb = Tensor::from_vec(&shape, diff.iter().map(|d| T::from_f64(-2.0 * d / n)).collect())?;
    g.reduce(T::from_f64(total / n), vec![(a, ga), (b, gb)])
}

/// Crops the part of a patch-local map `x` that lies under the image-space
/// region `omega`, where the map covers `window` at `stride` pixels per cell.
fn crop_region<T: Float>(g: &mut Graph<T>, x: Var, window: &Window, omega: &Window, stride: usize) -> Result<Var> {
    let local = window
        .local(omega)
        .ok_or_else(|| Error::InvalidArgument(format!("region {omega} outside window {window}")))?;
    let cell = scale_window(&local, stride)?;
    g.crop(x, cell.y0, cell.x0, cell.h, cell.w)
}

/// Stride of a patch-local map whose spatial dims are `dims`.
fn stride_of(window: &Window, dims: (usize, usize)) -> Result<usize> {
    let (h, w) = dims;
    if h == 0 || window.h % h != 0 || window.w % w != 0 || window.h / h != window.w / w {
        return Err(Error::Shape(format!("map {h}x{w} does not evenly cover window {window}")));
    }
    Ok(window.h / h)
}

/// Overlap consistency between two patch predictions.
///
/// Returns `(feature term, depth term)`: the feature term sums, over pyramid
/// levels, the mean squared difference of the two feature maps on the
/// shared region; the depth term is the mean squared depth difference there.
pub fn consistency_loss<T: Float>(
    g: &mut Graph<T>,
    features1: &[Var],
    features2: &[Var],
    depth1: Var,
    depth2: Var,
    window1: &Window,
    window2: &Window,
) -> Result<(Var, Var)> {
    if features1.len() != features2.len() {
        return Err(Error::Shape(format!(
            "pyramids with {} and {} levels",
            features1.len(),
            features2.len()
        )));
    }
    if (window1.w, window1.h) != (window2.w, window2.h) {
        return Err(Error::Shape(format!("windows {window1} and {window2} differ in size")));
    }
    let omega = intersect(window1, window2)
        .ok_or_else(|| Error::Empty(format!("windows {window1} and {window2} do not overlap")))?
        .region;
    let mut terms = Vec::with_capacity(features1.len());
    for (&f1, &f2) in features1.iter().zip(features2) {
        let (_, h, w) = g.value(f1).chw()?;
        let stride = stride_of(window1, (h, w))?;
        let a = crop_region(g, f1, window1, &omega, stride)?;
        let b = crop_region(g, f2, window2, &omega, stride)?;
        let t = mse_var(g, a, b)?;
        terms.push((t, 1.0));
    }
    let feat = if terms.is_empty() {
        g.constant(Tensor::scalar(T::ZERO))
    } else {
        g.weighted_sum(&terms)?
    };
    let dims = g.value(depth1).hw()?;
    let stride = stride_of(window1, dims)?;
    let a = crop_region(g, depth1, window1, &omega, stride)?;
    let b = crop_region(g, depth2, window2, &omega, stride)?;
    let depth = mse_var(g, a, b)?;
    Ok((feat, depth))
}

/// `si + mu2·consistency`.
pub fn total_loss(si: f64, consistency: f64, mu2: f64) -> f64 {
    si + mu2 * consistency
}

/// Weights of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the depth term inside the consistency loss.
    pub mu1: f64,
    /// Weight of the consistency loss in the total.
    pub mu2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mu1: 0.1, mu2: 0.1 }
    }
}

/// Scalar summary of one training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub si: f64,
    pub consistency_feat: f64,
    pub consistency_depth: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl LossReport {
    pub fn new(si: f64, consistency_feat: f64, consistency_depth: f64, w: LossWeights) -> Self {
        Self {
            total: total_loss(si, consistency_feat + w.mu1 * consistency_depth, w.mu2),
            si,
            consistency_feat,
            consistency_depth,
            mu1: w.mu1,
            mu2: w.mu2,
        }
    }

    /// Report of a purely supervised step.
    pub fn supervised(si: f64) -> Self {
        Self::new(si, 0.0, 0.0, LossWeights { mu1: 0.0, mu2: 0.0 })
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.si, self.consistency_feat, self.consistency_depth]
            .iter()
            .all(|v| v.is_finite())
    }

    pub const CSV_HEADER: &'static str = "step,total,si,feat,depth";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{}",
            self.total, self.si, self.consistency_feat, self.consistency_depth
        )
    }
}
