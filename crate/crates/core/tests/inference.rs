mod common;

use common::checks::{self, scene_image, small_pipeline, StubPredictor};
use common::oracles;
use patchfusion::geometry::{PatchPlan, PlannedWindow, Window, WindowKind};
use patchfusion::inference::{
    blend_feathered, fit_or_fallback, fit_scale_shift, infer_baseline, infer_cai, infer_stitched, FusionState,
    PatchPredictor, DEFAULT_BLEND_SIGMA,
};
use patchfusion::{Error, Tensor};
use proptest::prelude::*;

#[test]
fn stitched_is_a_partition() {
    checks::assert_passed(&[checks::inference_stitched_partition()]);
}

#[test]
fn grid_only_cai_equals_stitched() {
    checks::assert_passed(&[checks::inference_grid_plan_matches_stitched()]);
}

#[test]
fn running_mean_of_stub_values() {
    checks::assert_passed(&[checks::inference_running_mean()]);
}

#[test]
fn p49_coverage_matches_enumeration() {
    checks::assert_passed(&[checks::inference_p49_coverage()]);
}

#[test]
fn cai_is_deterministic() {
    checks::assert_passed(&[checks::inference_cai_determinism()]);
}

#[test]
fn pipeline_rejects_indivisible_images() {
    let p = small_pipeline(1);
    let err = infer_stitched(&p, &Tensor::zeros(&[3, 200, 384]), [128, 192]).unwrap_err();
    assert!(matches!(err, Error::NotDivisible { axis: "height", .. }), "{err}");
}

#[test]
fn plan_without_tiling_grid_is_rejected() {
    let stub = StubPredictor::new([128, 192], |_, _| 1.0);
    let mut plan = PatchPlan::grid(256, 384, 128, 192).unwrap();
    plan.windows.remove(3);
    assert!(infer_cai(&stub, &Tensor::zeros(&[3, 256, 384]), &plan).is_err());
}

#[test]
fn fusion_depth_stays_in_bounds() {
    let p = small_pipeline(2);
    let image = scene_image(3, 256, 384);
    let plan = PatchPlan::grid_and_shifted(256, 384, 128, 192).unwrap();
    let out = infer_cai(&p, &image, &plan).unwrap();
    let (lo, hi) = p.config.depth_bounds;
    assert!(out.depth.data().iter().all(|&v| (v as f64) > lo && (v as f64) < hi));
    assert_eq!(out.predictions.len(), 9);
    assert_eq!(out.state.cursor, 9);
}

#[test]
fn canvas_untouched_where_not_visited() {
    let mut s = FusionState::new(4, 6);
    s.fold(&Window::new(0, 0, 3, 2).unwrap(), &Tensor::full(&[2, 3], 5.0)).unwrap();
    assert!(matches!(s.depth(), Err(Error::Uncovered { x: 3, y: 0 })));
    assert_eq!(s.counts().iter().filter(|&&c| c == 1).count(), 6);
    assert_eq!(s.counts_map().sum(), 6.0);
}

#[test]
fn scale_shift_fits() {
    let f = Tensor::from_fn(&[4, 4], |i| 1.0 + (i * i % 7) as f32);
    let fit = fit_scale_shift(&f, &f, &[true; 16]).unwrap();
    assert!((fit.s - 1.0).abs() < 1e-12 && fit.t.abs() < 1e-12);
    let c = f.map(|v| 2.0 * v + 3.0);
    let fit = fit_scale_shift(&f, &c, &[true; 16]).unwrap();
    assert!((fit.s - 2.0).abs() < 1e-9 && (fit.t - 3.0).abs() < 1e-9);
    let flat = Tensor::full(&[4, 4], 2.0f32);
    assert!(matches!(fit_scale_shift(&flat, &c, &[true; 16]), Err(Error::Degenerate(_))));
    let fallback = fit_or_fallback(&flat, &Tensor::full(&[4, 4], 5.0), &[true; 16]).unwrap();
    assert_eq!((fallback.s, fallback.t), (1.0, 3.0));
}

#[test]
fn feathered_blend_properties() {
    let full = Window::new(0, 0, 12, 8).unwrap();
    let d = Tensor::from_fn(&[8, 12], |i| 1.0 + i as f32 * 0.25);
    let same = blend_feathered(&[(full, d.clone())], 8, 12, 0.5).unwrap();
    assert_eq!(same.data(), d.data());
    let a = Window::new(0, 0, 8, 8).unwrap();
    let b = Window::new(4, 0, 8, 8).unwrap();
    for sigma in [0.05, 0.5, 3.0] {
        let out = blend_feathered(&[(a, Tensor::full(&[8, 8], 7.0)), (b, Tensor::full(&[8, 8], 7.0))], 8, 12, sigma)
            .unwrap();
        assert!(out.data().iter().all(|&v| (v - 7.0).abs() < 1e-5));
        // normalized weights reproduce a constant exactly up to rounding
        let ones = blend_feathered(&[(a, Tensor::full(&[8, 8], 1.0)), (b, Tensor::full(&[8, 8], 1.0))], 8, 12, sigma)
            .unwrap();
        assert!(ones.data().iter().all(|&v| (v as f64 - 1.0).abs() < 1e-6));
    }
    let err = blend_feathered(&[(a, Tensor::full(&[8, 8], 1.0))], 8, 12, 0.5).unwrap_err();
    assert!(matches!(err, Error::Uncovered { x: 8, y: 0 }));
}

#[test]
fn baseline_covers_the_image() {
    let p = small_pipeline(4);
    let image = scene_image(5, 256, 384);
    let ctx = p.prepare(&image).unwrap();
    let plan = PatchPlan::grid_and_shifted(256, 384, 128, 192).unwrap();
    let out = infer_baseline(&p, &ctx, &plan, DEFAULT_BLEND_SIGMA).unwrap();
    assert_eq!(out.shape(), &[256, 384]);
    assert!(out.all_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// With a stub returning a distinct constant per call, each pixel holds
    /// the mean of the values of every window covering it.
    #[test]
    fn running_mean_is_mean_of_covering_calls(extra in prop::collection::vec((0usize..5, 0usize..5), 0..12)) {
        let stub = StubPredictor::new([8, 12], |k, _| (k * k % 11 + 1) as f32);
        let mut plan = PatchPlan::grid(16, 24, 8, 12).unwrap();
        for &(i, j) in &extra {
            plan.windows.push(PlannedWindow {
                window: Window::new(j * 3, i * 2, 12, 8).unwrap(),
                kind: WindowKind::Random,
            });
        }
        let out = infer_cai(&stub, &Tensor::zeros(&[3, 16, 24]), &plan).unwrap();
        let windows: Vec<Window> = plan.windows.iter().map(|p| p.window).collect();
        let expected = oracles::coverage(&windows, 16, 24);
        prop_assert_eq!(out.state.counts(), expected.as_slice());
        for y in 0..16 {
            for x in 0..24 {
                let vals: Vec<f64> = windows
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| x >= w.x0 && x < w.x1() && y >= w.y0 && y < w.y1())
                    .map(|(k, _)| (k * k % 11 + 1) as f64)
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                prop_assert!((out.depth.at2(y, x) as f64 - mean).abs() < 1e-5);
            }
        }
    }
}
