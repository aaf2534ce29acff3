mod common;

use common::rng;
use patchfusion::geometry::Window;
use patchfusion::metrics::{
    ce, ce_over_pairs, edge_mask, see, standard_metrics, summarize, EvalReport, DEFAULT_DEPTH_CAP,
};
use patchfusion::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn map(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> Tensor<f32> {
    Tensor::from_fn(&[h, w], |i| f(i / w, i % w))
}

#[test]
fn standard_metric_examples() {
    let gt = map(6, 6, |y, x| 2.0 + (y * 6 + x) as f32);
    let all = vec![true; 36];
    let m = standard_metrics(&gt, &gt, &all, DEFAULT_DEPTH_CAP).unwrap();
    assert_eq!((m.delta1, m.rel, m.rms, m.silog), (100.0, 0.0, 0.0, 0.0));
    let m = standard_metrics(&gt.map(|v| 1.1 * v), &gt, &all, DEFAULT_DEPTH_CAP).unwrap();
    assert!((m.rel - 0.1).abs() < 1e-6 && m.delta1 == 100.0 && m.silog < 1e-4);
    let ten = Tensor::full(&[6, 6], 10.0f32);
    let m = standard_metrics(&ten.map(|v| v + 2.0), &ten, &all, DEFAULT_DEPTH_CAP).unwrap();
    assert!((m.rms - 2.0).abs() < 1e-12);
    let far = Tensor::full(&[6, 6], 90.0f32);
    assert!(standard_metrics(&far, &far, &all, DEFAULT_DEPTH_CAP).is_err());
}

#[test]
fn edge_mask_examples() {
    assert!(edge_mask(&Tensor::full(&[8, 8], 5.0f32), 0.05).unwrap().iter().all(|&e| !e));
    let step = map(6, 10, |_, x| if x < 5 { 2.0 } else { 4.0 });
    let m = edge_mask(&step, 0.05).unwrap();
    for y in 0..6 {
        let row: Vec<bool> = (0..10).map(|x| m[y * 10 + x]).collect();
        let band: Vec<bool> = (0..10).map(|x| x == 4 || x == 5).collect();
        assert_eq!(row, band);
    }
}

#[test]
fn see_examples() {
    let gt = map(6, 10, |_, x| if x < 5 { 2.0 } else { 4.0 });
    let edges = edge_mask(&gt, 0.05).unwrap();
    assert_eq!(see(&gt, &gt, &edges).unwrap(), 0.0);
    assert!((see(&gt.map(|v| v + 0.25), &gt, &edges).unwrap() - 0.25).abs() < 1e-12);
    let shifted = map(6, 10, |_, x| if x < 6 { 2.0 } else { 4.0 });
    assert_eq!(see(&shifted, &gt, &edges).unwrap(), 0.0);
    let mae: f64 = (0..60)
        .filter(|&i| edges[i])
        .map(|i| (shifted.data()[i] - gt.data()[i]).abs() as f64)
        .sum();
    assert!(mae > 0.0);
    assert!(see(&gt, &gt, &[false; 60]).is_err());
}

#[test]
fn ce_examples() {
    let global = map(8, 12, |y, x| 1.0 + (y * 12 + x) as f32 * 0.1);
    let from_global = ce(|w| global.crop(w.y0, w.x0, w.h, w.w), 8, 12, 4, 6).unwrap();
    assert_eq!(from_global, 0.0);
    let a = Window::new(0, 0, 6, 4).unwrap();
    let b = Window::new(3, 0, 6, 4).unwrap();
    let toy = ce_over_pairs(&[a, b], &[Tensor::full(&[4, 6], 1.0), Tensor::full(&[4, 6], 2.0)], &[(0, 1)]).unwrap();
    assert_eq!(toy, 1.0);
    assert!(ce_over_pairs(&[a], &[Tensor::full(&[4, 6], 1.0)], &[]).is_err());
    assert!(ce(|w| global.crop(w.y0, w.x0, w.h, w.w), 8, 12, 8, 12).is_err());
}

#[test]
fn report_rows_and_summary() {
    let gt = map(6, 6, |y, x| 2.0 + (y + x) as f32);
    let all = vec![true; 36];
    let r1 = EvalReport::evaluate("a", "p16", &gt, &gt, &all, DEFAULT_DEPTH_CAP, Some(0.5)).unwrap();
    let r2 = EvalReport::evaluate("a", "p49", &gt.map(|v| v * 1.1), &gt, &all, DEFAULT_DEPTH_CAP, None).unwrap();
    assert_eq!(EvalReport::CSV_HEADER, "id,method,delta1,rel,rms,silog,see,ce");
    assert_eq!(r1.csv_row(), "a,p16,100,0,0,0,0,0.5");
    assert!(r2.csv_row().ends_with(','));
    let s = summarize(&[r1.clone(), r2, r1]);
    assert_eq!(s.len(), 2);
    assert_eq!((s[0].method.as_str(), s[0].n_images), ("p16", 2));
    // a prediction at another resolution is resized to the ground truth
    let small = Tensor::full(&[3, 3], 4.0f32);
    let r = EvalReport::evaluate("b", "coarse", &small, &Tensor::full(&[6, 6], 4.0), &all, DEFAULT_DEPTH_CAP, None)
        .unwrap();
    assert_eq!((r.rms, r.n_pixels), (0.0, 36));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_permutation_invariant(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let gt: Vec<f32> = (0..64).map(|_| r.random_range(0.5..90.0)).collect();
        let pred: Vec<f32> = (0..64).map(|_| r.random_range(0.5..90.0)).collect();
        let mut mask: Vec<bool> = (0..64).map(|_| r.random_bool(0.8)).collect();
        mask[0] = true;
        let gt0 = gt[0];
        let mut perm: Vec<usize> = (0..64).collect();
        perm.shuffle(&mut r);
        let t = |v: &[f32]| Tensor::from_vec(&[8, 8], v.to_vec()).unwrap();
        let pick = |v: &[f32]| perm.iter().map(|&i| v[i]).collect::<Vec<f32>>();
        let mut gt = gt;
        gt[0] = gt0.min(70.0);
        let a = standard_metrics(&t(&pred), &t(&gt), &mask, DEFAULT_DEPTH_CAP).unwrap();
        let pm: Vec<bool> = perm.iter().map(|&i| mask[i]).collect();
        let b = standard_metrics(&t(&pick(&pred)), &t(&pick(&gt)), &pm, DEFAULT_DEPTH_CAP).unwrap();
        prop_assert!((a.delta1 - b.delta1).abs() < 1e-9);
        prop_assert!((a.rel - b.rel).abs() < 1e-9);
        prop_assert!((a.rms - b.rms).abs() < 1e-9);
        prop_assert!((a.silog - b.silog).abs() < 1e-9);
        prop_assert_eq!(a.n_pixels, b.n_pixels);
    }

    #[test]
    fn see_never_exceeds_masked_mae(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let gt = Tensor::from_fn(&[8, 8], |_| r.random_range(1.0f32..20.0));
        let pred = Tensor::from_fn(&[8, 8], |_| r.random_range(1.0f32..20.0));
        let mut edges: Vec<bool> = (0..64).map(|_| r.random_bool(0.4)).collect();
        edges[5] = true;
        let v = see(&pred, &gt, &edges).unwrap();
        let n = edges.iter().filter(|&&e| e).count() as f64;
        let mae: f64 = (0..64).filter(|&i| edges[i]).map(|i| (pred.data()[i] - gt.data()[i]).abs() as f64).sum::<f64>() / n;
        prop_assert!(v <= mae + 1e-12);
    }

    #[test]
    fn delta1_is_scale_invariant(seed in 0u64..100_000, c in 0.5f32..2.0) {
        let mut r = rng(seed);
        let gt = Tensor::from_fn(&[8, 8], |_| r.random_range(1.0f32..30.0));
        let pred = Tensor::from_fn(&[8, 8], |_| r.random_range(1.0f32..30.0));
        let all = vec![true; 64];
        // a power-of-two factor keeps the float ratios exact
        let c = 2f32.powi((c * 4.0) as i32 - 4);
        let a = standard_metrics(&pred, &gt, &all, (1e-3, 1e6)).unwrap();
        let b = standard_metrics(&pred.map(|v| v * c), &gt.map(|v| v * c), &all, (1e-3, 1e6)).unwrap();
        prop_assert_eq!(a.delta1, b.delta1);
    }
}
