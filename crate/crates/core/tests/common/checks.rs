//! Acceptance checks shared by the core integration tests and the
//! acceptance runner. Each returns one [`Outcome`] per measured quantity.

use std::cell::Cell;
use std::fmt;

use patchfusion::dataio::{generate_scene, SceneConfig};
use patchfusion::geometry::{
    grid_windows, intersect, random_windows, sample_overlapping_pair, scale_window, shifted_windows,
    PatchPlan, PlannedWindow, Window, WindowKind,
};
use patchfusion::inference::{fit_scale_shift, infer_cai, infer_stitched, PatchPredictor, Pipeline};
use patchfusion::losses::{consistency_loss, silog_loss, total_loss, LossReport, LossWeights, SilogParams};
use patchfusion::metrics::{ce, see, standard_metrics, DEFAULT_DEPTH_CAP};
use patchfusion::models::{
    base_forward, fb, fusion::add_fb_params, fusion_forward, g2l_forward, init_base_params, init_fusion_params,
    init_g2l_params, ModelConfig,
};
use patchfusion::nn::{Graph, ParamSet};
use patchfusion::{Result, Tensor};
use rand::Rng;

use super::oracles;
use super::{finite_difference_check, probe_loss, random_tensor, rng, GradReport};

pub struct Outcome {
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    /// Passes when `value < limit`; NaN fails.
    pub fn below(label: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            label: label.into(),
            passed: value < limit,
            detail: format!("{value:.3e} < {limit:e}"),
        }
    }

    /// Passes when `value <= limit`; NaN fails.
    pub fn at_most(label: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            label: label.into(),
            passed: value <= limit,
            detail: format!("{value:.3e} <= {limit:e}"),
        }
    }

    pub fn holds(label: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(label: &str, r: Result<Outcome>) -> Self {
        r.unwrap_or_else(|e| Self::holds(label, false, format!("error: {e}")))
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "ok" } else { "FAILED" };
        write!(f, "{mark:>6}  {}: {}", self.label, self.detail)
    }
}

pub fn assert_passed(outcomes: &[Outcome]) {
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.to_string()).collect();
    assert!(failed.is_empty(), "failed checks:\n{}", failed.join("\n"));
}

fn grad_outcome(label: &str, r: &GradReport, limit: f64) -> Outcome {
    let mut o = Outcome::below(label, r.max_rel_err, limit);
    o.detail = format!("max relative error {} over {} probes", o.detail, r.probes.len());
    o
}

// ---------------------------------------------------------------- gradients

pub fn micro_config() -> ModelConfig {
    ModelConfig {
        levels: 2,
        channels: vec![4, 8],
        g2l_window: 2,
        g2l_heads: 2,
        mlp_ratio: 2.0,
        depth_bounds: (0.5, 100.0),
        patch: [8, 12],
    }
}

fn base_probe_params() -> (ModelConfig, ParamSet<f64>, Tensor<f64>) {
    let cfg = micro_config();
    let params = init_base_params(&cfg, &mut rng(1));
    let image = random_tensor(&mut rng(2), &[3, 8, 12], 0.0, 1.0);
    (cfg, params, image)
}

fn base_gradient(select: fn(&str) -> bool, seed: u64) -> GradReport {
    let (cfg, params, image) = base_probe_params();
    finite_difference_check(&params, select, 8, 1e-5, seed, |g, p| {
        let out = base_forward(g, p, &cfg, &image).unwrap();
        let mut outs = out.features.clone();
        outs.push(out.depth);
        let terms: Vec<_> = outs
            .iter()
            .enumerate()
            .map(|(i, &f)| (probe_loss(g, f, 10 + i as u64), 1.0))
            .collect();
        g.weighted_sum(&terms).unwrap()
    })
}

pub fn grad_base_encoder_decoder() -> Outcome {
    let r = base_gradient(|n| n.starts_with("enc") || n.starts_with("dec"), 3);
    grad_outcome("base encoder/decoder", &r, 1e-4)
}

pub fn grad_depth_head() -> Outcome {
    let r = base_gradient(|n| n.starts_with("head"), 4);
    grad_outcome("depth head", &r, 1e-4)
}

fn g2l_config() -> ModelConfig {
    ModelConfig {
        channels: vec![8, 8],
        ..micro_config()
    }
}

pub fn grad_g2l() -> Outcome {
    let cfg = g2l_config();
    let params: ParamSet<f64> = init_g2l_params(&cfg, 1, &mut rng(5));
    let feature = random_tensor(&mut rng(6), &[8, 4, 6], -1.0, 1.0);
    let r = finite_difference_check(&params, |_| true, 8, 1e-5, 7, |g, p| {
        let x = g.constant(feature.clone());
        let y = g2l_forward(g, p, "", &cfg, x).unwrap();
        probe_loss(g, y, 8)
    });
    grad_outcome("G2L attention parameters", &r, 1e-4)
}

pub fn grad_g2l_input() -> Outcome {
    let cfg = g2l_config();
    let weights: ParamSet<f64> = init_g2l_params(&cfg, 1, &mut rng(9));
    let mut params = ParamSet::new();
    params.insert("x", random_tensor(&mut rng(10), &[8, 4, 6], -1.0, 1.0));
    let r = finite_difference_check(&params, |_| true, 8, 1e-5, 11, |g, p| {
        let wb = weights.bind(g, false);
        let y = g2l_forward(g, &wb, "", &cfg, p.get("x").unwrap()).unwrap();
        probe_loss(g, y, 12)
    });
    grad_outcome("G2L input", &r, 1e-4)
}

pub fn grad_fusion_block() -> Outcome {
    let mut params = ParamSet::<f64>::new();
    add_fb_params(&mut params, "fb", 8, 6, &mut rng(13));
    let a = random_tensor(&mut rng(14), &[4, 6, 6], -1.0, 1.0);
    let b = random_tensor(&mut rng(15), &[4, 6, 6], -1.0, 1.0);
    let r = finite_difference_check(&params, |_| true, 8, 1e-5, 16, |g, p| {
        let (xa, xb) = (g.constant(a.clone()), g.constant(b.clone()));
        let y = fb(g, p, "fb", &[xa, xb]).unwrap();
        probe_loss(g, y, 17)
    });
    grad_outcome("fusion block", &r, 1e-4)
}

/// The whole fusion network on a 32×48 patch inside a 64×96 image.
pub fn grad_fusion_network() -> Outcome {
    let cfg = ModelConfig {
        levels: 3,
        channels: vec![4, 8, 8],
        patch: [32, 48],
        ..micro_config()
    };
    let base: ParamSet<f64> = init_base_params(&cfg, &mut rng(20));
    let params: ParamSet<f64> = init_fusion_params(&cfg, &mut rng(21));
    let small = random_tensor(&mut rng(22), &[3, 32, 48], 0.0, 1.0);
    let crop = random_tensor(&mut rng(23), &[3, 32, 48], 0.0, 1.0);
    let d_c = random_tensor(&mut rng(24), &[32, 48], 2.0, 20.0);
    let d_f = random_tensor(&mut rng(25), &[32, 48], 2.0, 20.0);
    let window = Window::new(16, 16, 48, 32).unwrap();
    let r = finite_difference_check(&params, |_| true, 8, 1e-5, 26, |g, p| {
        let bp = base.bind(g, false);
        let coarse = base_forward(g, &bp, &cfg, &small).unwrap();
        let fine = base_forward(g, &bp, &cfg, &crop).unwrap();
        let out = fusion_forward(g, p, &cfg, &crop, &d_c, &d_f, &coarse.features, &fine.features, window, [64, 96])
            .unwrap();
        let a = probe_loss(g, out.depth, 27);
        let b = probe_loss(g, out.features[1], 28);
        g.weighted_sum(&[(a, 1.0), (b, 1.0)]).unwrap()
    });
    grad_outcome("full fusion network", &r, 1e-3)
}

pub fn criterion_gradients() -> Vec<Outcome> {
    vec![
        grad_base_encoder_decoder(),
        grad_depth_head(),
        grad_g2l(),
        grad_g2l_input(),
        grad_fusion_block(),
        grad_fusion_network(),
    ]
}

// ------------------------------------------------------------ metric oracles

pub const ORACLE_INSTANCES: u64 = 100;
const ORACLE_TOL: f64 = 1e-9;

fn random_map(r: &mut impl Rng, h: usize, w: usize, lo: f32, hi: f32) -> Tensor<f32> {
    Tensor::from_fn(&[h, w], |_| r.random_range(lo..hi))
}

/// Largest deviation of each standard metric from the loop oracle.
pub fn oracle_standard_metrics() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..ORACLE_INSTANCES {
        let mut r = rng(1000 + i);
        // some ground truth beyond the cap so the selection is exercised
        let gt = random_map(&mut r, 8, 8, 0.5, 95.0);
        let pred = random_map(&mut r, 8, 8, 0.5, 95.0);
        let mut mask: Vec<bool> = (0..64).map(|_| r.random_bool(0.8)).collect();
        mask[0] = true;
        let mut gt = gt;
        gt.data_mut()[0] = 10.0;
        let m = standard_metrics(&pred, &gt, &mask, DEFAULT_DEPTH_CAP).unwrap();
        let o = oracles::standard_metrics(&pred, &gt, &mask, DEFAULT_DEPTH_CAP);
        for (a, b) in [(m.delta1, o.delta1), (m.rel, o.rel), (m.rms, o.rms), (m.silog, o.silog)] {
            worst = worst.max((a - b).abs());
        }
    }
    Outcome::at_most("standard_metrics vs loop oracle", worst, ORACLE_TOL)
}

pub fn oracle_see() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..ORACLE_INSTANCES {
        let mut r = rng(2000 + i);
        let gt = random_map(&mut r, 8, 8, 1.0, 50.0);
        let pred = random_map(&mut r, 8, 8, 1.0, 50.0);
        let mut edges: Vec<bool> = (0..64).map(|_| r.random_bool(0.3)).collect();
        edges[r.random_range(0..64)] = true;
        let v = see(&pred, &gt, &edges).unwrap();
        worst = worst.max((v - oracles::see(&pred, &gt, &edges)).abs());
    }
    Outcome::at_most("see vs 3x3 neighborhood oracle", worst, ORACLE_TOL)
}

/// Random stub predictions on the half-overlap lattice of an 8×8 image
/// with 4×4 patches.
pub fn oracle_ce() -> Outcome {
    let label = "ce vs pair enumeration oracle";
    let run = || -> Result<Outcome> {
        let mut worst = 0.0f64;
        for i in 0..ORACLE_INSTANCES {
            let mut windows = Vec::new();
            let mut preds = Vec::new();
            let value = ce(
                |w: &Window| {
                    let mut r = rng(3000 + i * 97 + (w.y0 * 8 + w.x0) as u64);
                    let p = random_map(&mut r, w.h, w.w, 1.0, 20.0);
                    windows.push(*w);
                    preds.push(p.clone());
                    Ok(p)
                },
                8,
                8,
                4,
                4,
            )?;
            worst = worst.max((value - oracles::ce(&windows, &preds)).abs());
        }
        Ok(Outcome::at_most(label, worst, ORACLE_TOL))
    };
    Outcome::from_result(label, run())
}

/// Two-level pyramids for an 8×8 patch; strides 2 and 4.
pub fn random_pyramid(r: &mut impl Rng) -> (Vec<Tensor<f64>>, Tensor<f64>) {
    let f = vec![random_tensor(r, &[3, 4, 4], -1.0, 1.0), random_tensor(r, &[5, 2, 2], -1.0, 1.0)];
    (f, random_tensor(r, &[8, 8], 1.0, 10.0))
}

/// Overlapping 8×8 windows aligned to 4 inside a 16×16 image.
pub fn random_overlapping_windows(r: &mut impl Rng) -> (Window, Window) {
    loop {
        let mut pick = || Window::new(4 * r.random_range(0..3), 4 * r.random_range(0..3), 8, 8).unwrap();
        let (a, b) = (pick(), pick());
        if intersect(&a, &b).is_some() {
            return (a, b);
        }
    }
}

/// Evaluates the library consistency loss on constant inputs.
pub fn consistency_terms(
    f1: &[Tensor<f64>],
    f2: &[Tensor<f64>],
    d1: &Tensor<f64>,
    d2: &Tensor<f64>,
    w1: &Window,
    w2: &Window,
) -> Result<(f64, f64)> {
    let mut g = Graph::<f64>::new();
    let a: Vec<_> = f1.iter().map(|t| g.constant(t.clone())).collect();
    let b: Vec<_> = f2.iter().map(|t| g.constant(t.clone())).collect();
    let (da, db) = (g.constant(d1.clone()), g.constant(d2.clone()));
    let (feat, depth) = consistency_loss(&mut g, &a, &b, da, db, w1, w2)?;
    Ok((g.value(feat).data()[0], g.value(depth).data()[0]))
}

pub fn oracle_consistency() -> Outcome {
    let label = "consistency_loss vs cell loop oracle";
    let run = || -> Result<Outcome> {
        let mut worst = 0.0f64;
        for i in 0..ORACLE_INSTANCES {
            let mut r = rng(4000 + i);
            let (f1, d1) = random_pyramid(&mut r);
            let (f2, d2) = random_pyramid(&mut r);
            let (w1, w2) = random_overlapping_windows(&mut r);
            let (feat, depth) = consistency_terms(&f1, &f2, &d1, &d2, &w1, &w2)?;
            let (of, od) = oracles::consistency(&f1, &f2, &d1, &d2, &w1, &w2);
            worst = worst.max((feat - of).abs()).max((depth - od).abs());
        }
        Ok(Outcome::at_most(label, worst, ORACLE_TOL))
    };
    Outcome::from_result(label, run())
}

pub fn oracle_fit_scale_shift() -> Outcome {
    let label = "fit_scale_shift vs normal equations";
    let run = || -> Result<Outcome> {
        let mut worst = 0.0f64;
        for i in 0..ORACLE_INSTANCES {
            let mut r = rng(5000 + i);
            let f = random_map(&mut r, 8, 8, 1.0, 30.0);
            let c = random_map(&mut r, 8, 8, 1.0, 30.0);
            let mut mask: Vec<bool> = (0..64).map(|_| r.random_bool(0.7)).collect();
            mask[0] = true;
            mask[1] = true;
            let fit = fit_scale_shift(&f, &c, &mask)?;
            let (s, t) = oracles::scale_shift(&f, &c, &mask);
            worst = worst.max((fit.s - s).abs()).max((fit.t - t).abs());
        }
        Ok(Outcome::at_most(label, worst, ORACLE_TOL))
    };
    Outcome::from_result(label, run())
}

pub fn criterion_metric_oracles() -> Vec<Outcome> {
    vec![
        oracle_standard_metrics(),
        oracle_see(),
        oracle_ce(),
        oracle_consistency(),
        oracle_fit_scale_shift(),
    ]
}

// ------------------------------------------------------------------ geometry

/// Image/patch configurations with a 4×4 grid plus the single-patch case.
pub const GRID_CASES: [(usize, usize, usize, usize, usize); 4] = [
    (2160, 3840, 540, 960, 16),
    (1080, 1920, 270, 480, 16),
    (512, 768, 128, 192, 16),
    (540, 960, 540, 960, 1),
];

pub fn geometry_grid_partition() -> Outcome {
    let label = "grid windows tile the image exactly";
    let run = || -> Result<Outcome> {
        for (h, w, ph, pw, n) in GRID_CASES {
            let grid = grid_windows(h, w, ph, pw)?;
            let area: usize = grid.iter().map(|g| g.area()).sum();
            let disjoint = (0..grid.len()).all(|i| (i + 1..grid.len()).all(|j| intersect(&grid[i], &grid[j]).is_none()));
            let inside = grid.iter().all(|g| g.fits(h, w));
            let row_major = grid.windows(2).all(|p| (p[0].y0, p[0].x0) < (p[1].y0, p[1].x0));
            if grid.len() != n || area != h * w || !disjoint || !inside || !row_major {
                return Ok(Outcome::holds(
                    label,
                    false,
                    format!("{h}x{w}/{ph}x{pw}: {} windows, area {area}, disjoint {disjoint}", grid.len()),
                ));
            }
        }
        Ok(Outcome::holds(label, true, format!("{} configurations", GRID_CASES.len())))
    };
    Outcome::from_result(label, run())
}

pub fn geometry_shifted_count() -> Outcome {
    let label = "shifted windows of the 4x4 grid";
    let run = || -> Result<Outcome> {
        let shifted = shifted_windows(2160, 3840, 540, 960)?;
        let right = shifted.iter().take(12).all(|s| s.x0 % 960 == 480 && s.y0 % 540 == 0);
        let down = shifted[12..24].iter().all(|s| s.x0 % 960 == 0 && s.y0 % 540 == 270);
        let both = shifted[24..].iter().all(|s| s.x0 % 960 == 480 && s.y0 % 540 == 270);
        let first = shifted[0] == Window::new(480, 0, 960, 540)?;
        let inside = shifted.iter().all(|s| s.fits(2160, 3840));
        let mut formula = true;
        for (rows, cols) in [(1, 1), (1, 3), (2, 2), (3, 5), (4, 4)] {
            let n = shifted_windows(rows * 10, cols * 10, 10, 10)?.len();
            formula &= n == 2 * rows * cols - rows - cols + (rows - 1) * (cols - 1);
        }
        let ok = shifted.len() == 33 && right && down && both && first && inside && formula;
        Ok(Outcome::holds(
            label,
            ok,
            format!("count {} (12 right, 12 down, 9 both: {})", shifted.len(), right && down && both),
        ))
    };
    Outcome::from_result(label, run())
}

pub fn geometry_scale_commutes() -> Outcome {
    let label = "scale_window commutes with intersect";
    let run = || -> Result<Outcome> {
        let mut r = rng(6000);
        let mut checked = 0;
        for _ in 0..2000 {
            let s = 1 << r.random_range(0..5);
            let mut pick = || {
                Window::new(
                    s * r.random_range(0..16),
                    s * r.random_range(0..16),
                    s * r.random_range(1..12),
                    s * r.random_range(1..12),
                )
                .unwrap()
            };
            let (a, b) = (pick(), pick());
            let lhs = intersect(&a, &b).map(|o| scale_window(&o.region, s)).transpose()?;
            let rhs = intersect(&scale_window(&a, s)?, &scale_window(&b, s)?).map(|o| o.region);
            if lhs != rhs {
                return Ok(Outcome::holds(label, false, format!("{a} and {b} at stride {s}")));
            }
            checked += 1;
        }
        Ok(Outcome::holds(label, true, format!("{checked} random aligned pairs")))
    };
    Outcome::from_result(label, run())
}

pub fn geometry_seeded_determinism() -> Outcome {
    let label = "seeded sampling is deterministic";
    let run = || -> Result<Outcome> {
        let a = random_windows(128, 2160, 3840, 540, 960, 30, 3)?;
        let b = random_windows(128, 2160, 3840, 540, 960, 30, 3)?;
        let c = random_windows(128, 2160, 3840, 540, 960, 30, 4)?;
        let mut pairs_ok = true;
        for seed in 0..50 {
            let p = sample_overlapping_pair(512, 768, 128, 192, 0.25, 16, seed)?;
            let q = sample_overlapping_pair(512, 768, 128, 192, 0.25, 16, seed)?;
            pairs_ok &= p == q && p.2.frac >= 0.25 && p.0 != p.1;
        }
        let plan1 = PatchPlan::with_random(512, 768, 128, 192, 32, 16, 9)?;
        let plan2 = PatchPlan::with_random(512, 768, 128, 192, 32, 16, 9)?;
        let ok = a.len() == 128 && a == b && a != c && pairs_ok && plan1 == plan2;
        Ok(Outcome::holds(label, ok, format!("windows equal {}, pairs ok {pairs_ok}", a == b)))
    };
    Outcome::from_result(label, run())
}

pub fn criterion_geometry() -> Vec<Outcome> {
    vec![
        geometry_grid_partition(),
        geometry_shifted_count(),
        geometry_scale_commutes(),
        geometry_seeded_determinism(),
    ]
}

// ----------------------------------------------------------- loss identities

pub fn loss_silog_scale_invariance() -> Outcome {
    let label = "silog scale invariance";
    let run = || -> Result<Outcome> {
        let unit = SilogParams {
            lambda: 1.0,
            ..SilogParams::default()
        };
        let mut worst = 0.0f64;
        for i in 0..ORACLE_INSTANCES {
            let mut r = rng(7000 + i);
            let gt = random_tensor(&mut r, &[8, 8], 0.5, 80.0);
            let pred = random_tensor(&mut r, &[8, 8], 0.5, 80.0);
            let mask: Vec<bool> = (0..64).map(|k| k == 0 || r.random_bool(0.8)).collect();
            let c = r.random_range(0.01..100.0);
            let scaled_pred = gt.map(|v| v * c);
            worst = worst.max(silog_loss(&scaled_pred, &gt, &mask, unit)?.abs());
            let base = silog_loss(&pred, &gt, &mask, SilogParams::default())?;
            let joint = silog_loss(&pred.map(|v| v * c), &gt.map(|v| v * c), &mask, SilogParams::default())?;
            worst = worst.max((base - joint).abs());
        }
        Ok(Outcome::at_most(label, worst, 1e-9))
    };
    Outcome::from_result(label, run())
}

pub fn loss_consistency_symmetry() -> Outcome {
    let label = "consistency_loss symmetry";
    let run = || -> Result<Outcome> {
        let mut worst = 0.0f64;
        for i in 0..ORACLE_INSTANCES {
            let mut r = rng(8000 + i);
            let (f1, d1) = random_pyramid(&mut r);
            let (f2, d2) = random_pyramid(&mut r);
            let (w1, w2) = random_overlapping_windows(&mut r);
            let ab = consistency_terms(&f1, &f2, &d1, &d2, &w1, &w2)?;
            let ba = consistency_terms(&f2, &f1, &d2, &d1, &w2, &w1)?;
            worst = worst.max((ab.0 - ba.0).abs()).max((ab.1 - ba.1).abs());
        }
        Ok(Outcome::at_most(label, worst, 1e-12))
    };
    Outcome::from_result(label, run())
}

/// Zero for identical crops, and for distinct windows cut from one shared
/// global field.
pub fn loss_consistency_zero_at_equality() -> Outcome {
    let label = "consistency_loss zero at equality";
    let run = || -> Result<Outcome> {
        let mut worst = 0.0f64;
        for i in 0..ORACLE_INSTANCES {
            let mut r = rng(9000 + i);
            let (f, d) = random_pyramid(&mut r);
            let (w1, w2) = random_overlapping_windows(&mut r);
            let same = consistency_terms(&f, &f, &d, &d, &w1, &w1)?;
            let global_f = [random_tensor(&mut r, &[3, 8, 8], -1.0, 1.0), random_tensor(&mut r, &[5, 4, 4], -1.0, 1.0)];
            let global_d = random_tensor(&mut r, &[16, 16], 1.0, 10.0);
            let cut = |w: &Window| -> Result<(Vec<Tensor<f64>>, Tensor<f64>)> {
                let f = vec![
                    global_f[0].crop(w.y0 / 2, w.x0 / 2, 4, 4)?,
                    global_f[1].crop(w.y0 / 4, w.x0 / 4, 2, 2)?,
                ];
                let d = global_d.crop(w.y0, w.x0, 8, 8)?;
                Ok((f, d))
            };
            let (a, da) = cut(&w1)?;
            let (b, db) = cut(&w2)?;
            let shared = consistency_terms(&a, &b, &da, &db, &w1, &w2)?;
            worst = worst.max(same.0.abs()).max(same.1.abs()).max(shared.0.abs()).max(shared.1.abs());
        }
        Ok(Outcome::at_most(label, worst, 1e-12))
    };
    Outcome::from_result(label, run())
}

pub fn loss_report_composition() -> Outcome {
    let w = LossWeights::default();
    let mut worst = (total_loss(1.0, 2.0, w.mu2) - 1.2).abs();
    let mut r = rng(9500);
    for _ in 0..ORACLE_INSTANCES {
        let (si, feat, depth) = (r.random_range(0.0..50.0), r.random_range(0.0..5.0), r.random_range(0.0..50.0));
        let rep = LossReport::new(si, feat, depth, w);
        worst = worst.max((rep.total - (si + 0.1 * (feat + 0.1 * depth))).abs());
    }
    let mut o = Outcome::at_most("LossReport composition (mu1 = mu2 = 0.1)", worst, 1e-12);
    o.passed &= w.mu1 == 0.1 && w.mu2 == 0.1;
    o
}

pub fn criterion_loss_identities() -> Vec<Outcome> {
    vec![
        loss_silog_scale_invariance(),
        loss_consistency_symmetry(),
        loss_consistency_zero_at_equality(),
        loss_report_composition(),
    ]
}

// ------------------------------------------------------- inference contracts

/// Predictor that returns a constant patch per call, chosen by
/// `value(call index, guided)`.
pub struct StubPredictor<F> {
    pub patch: [usize; 2],
    pub calls: Cell<usize>,
    pub value: F,
}

impl<F: Fn(usize, bool) -> f32> StubPredictor<F> {
    pub fn new(patch: [usize; 2], value: F) -> Self {
        Self {
            patch,
            calls: Cell::new(0),
            value,
        }
    }
}

impl<F: Fn(usize, bool) -> f32> PatchPredictor for StubPredictor<F> {
    type Context = [usize; 2];

    fn prepare(&self, image: &Tensor<f32>) -> Result<[usize; 2]> {
        let (_, h, w) = image.chw()?;
        Ok([h, w])
    }

    fn coarse_depth(&self, ctx: &[usize; 2]) -> Result<Tensor<f32>> {
        Ok(Tensor::full(ctx, 1.0))
    }

    fn fine(&self, _: &[usize; 2], _: &Window) -> Result<Tensor<f32>> {
        Ok(Tensor::full(&self.patch, 1.0))
    }

    fn fuse(&self, _: &[usize; 2], _: &Window, guide: Option<&Tensor<f32>>) -> Result<Tensor<f32>> {
        let k = self.calls.get();
        self.calls.set(k + 1);
        Ok(Tensor::full(&self.patch, (self.value)(k, guide.is_some())))
    }
}

/// A randomly initialized pipeline on 128×192 patches with narrow channels.
pub fn small_pipeline(seed: u64) -> Pipeline {
    let config = ModelConfig {
        channels: vec![4, 8, 8, 16],
        ..ModelConfig::default()
    };
    let mut r = rng(seed);
    Pipeline {
        coarse: init_base_params(&config, &mut r),
        fine: init_base_params(&config, &mut r),
        fusion: init_fusion_params(&config, &mut r),
        config,
    }
}

pub fn scene_image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    generate_scene(seed, h, w, &SceneConfig::default()).unwrap().image
}

pub fn inference_stitched_partition() -> Outcome {
    let label = "infer_stitched covers every pixel once";
    let run = || -> Result<Outcome> {
        let p = small_pipeline(11);
        let image = scene_image(12, 256, 384);
        let (depth, state) = infer_stitched(&p, &image, p.config.patch)?;
        let once = state.counts().iter().all(|&c| c == 1);
        // every pixel equals the fused output of its single covering patch
        let ctx = p.prepare(&image)?;
        let mut exact = true;
        for win in grid_windows(256, 384, 128, 192)? {
            let patch = p.fuse(&ctx, &win, None)?;
            exact &= depth.crop(win.y0, win.x0, win.h, win.w)?.data() == patch.data();
        }
        Ok(Outcome::holds(
            label,
            once && exact && depth.shape() == [256, 384],
            format!("counts all 1: {once}, patch outputs copied exactly: {exact}"),
        ))
    };
    Outcome::from_result(label, run())
}

pub fn inference_grid_plan_matches_stitched() -> Outcome {
    let label = "infer_cai on grid plan equals infer_stitched";
    let run = || -> Result<Outcome> {
        let p = small_pipeline(13);
        let image = scene_image(14, 256, 384);
        let (stitched, _) = infer_stitched(&p, &image, p.config.patch)?;
        let cai = infer_cai(&p, &image, &PatchPlan::grid(256, 384, 128, 192)?)?;
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        Ok(Outcome::holds(label, bits(&stitched) == bits(&cai.depth), "bitwise comparison"))
    };
    Outcome::from_result(label, run())
}

pub fn inference_running_mean() -> Outcome {
    let label = "running mean of 2.0 then 4.0";
    let run = || -> Result<Outcome> {
        let stub = StubPredictor::new([128, 192], |_, guided| if guided { 4.0 } else { 2.0 });
        let mut plan = PatchPlan::grid(256, 384, 128, 192)?;
        let extra = Window::new(96, 64, 192, 128)?;
        plan.windows.push(PlannedWindow {
            window: extra,
            kind: WindowKind::Shifted,
        });
        let out = infer_cai(&stub, &Tensor::zeros(&[3, 256, 384]), &plan)?;
        let mut ok = true;
        for y in 0..256 {
            for x in 0..384 {
                let inside = x >= extra.x0 && x < extra.x1() && y >= extra.y0 && y < extra.y1();
                let (want, count) = if inside { (3.0, 2) } else { (2.0, 1) };
                ok &= out.depth.at2(y, x) == want && out.state.counts()[y * 384 + x] == count;
            }
        }
        Ok(Outcome::holds(label, ok, "canvas 3.0 with count 2 under the extra window, 2.0 elsewhere"))
    };
    Outcome::from_result(label, run())
}

/// Coverage of the 49-window plan and the order-free running-mean value
/// under a stub returning a distinct constant per call.
pub fn inference_p49_coverage() -> Outcome {
    let label = "P=49 coverage and running-mean algebra";
    let run = || -> Result<Outcome> {
        let stub = StubPredictor::new([128, 192], |k, _| (k + 1) as f32);
        let plan = PatchPlan::grid_and_shifted(512, 768, 128, 192)?;
        let out = infer_cai(&stub, &Tensor::zeros(&[3, 512, 768]), &plan)?;
        let windows: Vec<Window> = plan.windows.iter().map(|p| p.window).collect();
        let expected = oracles::coverage(&windows, 512, 768);
        let counts = out.state.counts();
        let max = counts.iter().copied().max().unwrap_or(0);
        let min = counts.iter().copied().min().unwrap_or(0);
        let mut worst = 0.0f64;
        for y in 0..512 {
            for x in 0..768 {
                let vals: Vec<f64> = windows
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| x >= w.x0 && x < w.x1() && y >= w.y0 && y < w.y1())
                    .map(|(k, _)| (k + 1) as f64)
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                worst = worst.max((out.depth.at2(y, x) as f64 - mean).abs() / mean);
            }
        }
        let ok = plan.len() == 49 && counts == expected.as_slice() && min == 1 && max == 4 && worst < 1e-6;
        Ok(Outcome::holds(
            label,
            ok,
            format!("{} windows, counts in [{min}, {max}], worst relative mean error {worst:.1e}", plan.len()),
        ))
    };
    Outcome::from_result(label, run())
}

pub fn inference_cai_determinism() -> Outcome {
    let label = "infer_cai is deterministic";
    let run = || -> Result<Outcome> {
        let p = small_pipeline(15);
        let image = scene_image(16, 256, 384);
        let plan = PatchPlan::with_random(256, 384, 128, 192, 2, 16, 5)?;
        let a = infer_cai(&p, &image, &plan)?;
        let b = infer_cai(&p, &image, &plan)?;
        let same = a.depth.data().iter().zip(b.depth.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        Ok(Outcome::holds(label, same && a.depth.all_finite(), format!("{} windows", plan.len())))
    };
    Outcome::from_result(label, run())
}

pub fn criterion_inference_contracts() -> Vec<Outcome> {
    vec![
        inference_stitched_partition(),
        inference_grid_plan_matches_stitched(),
        inference_running_mean(),
        inference_p49_coverage(),
        inference_cai_determinism(),
    ]
}
