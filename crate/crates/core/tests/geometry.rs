mod common;

use common::checks;
use patchfusion::geometry::{
    grid_windows, intersect, random_windows, sample_overlapping_pair, scale_window, shifted_windows, PatchPlan,
    Window, WindowKind,
};
use proptest::prelude::*;

#[test]
fn grid_partition_is_exact() {
    checks::assert_passed(&[checks::geometry_grid_partition()]);
}

#[test]
fn shifted_grid_has_33_windows() {
    checks::assert_passed(&[checks::geometry_shifted_count()]);
}

#[test]
fn scaling_commutes_with_intersection() {
    checks::assert_passed(&[checks::geometry_scale_commutes()]);
}

#[test]
fn seeded_sampling_is_deterministic() {
    checks::assert_passed(&[checks::geometry_seeded_determinism()]);
}

#[test]
fn plan_order_and_serialization() {
    let plan = PatchPlan::with_random(512, 768, 128, 192, 5, 16, 2).unwrap();
    let kinds: Vec<WindowKind> = plan.windows.iter().map(|w| w.kind).collect();
    assert_eq!(kinds.iter().filter(|&&k| k == WindowKind::Grid).count(), 16);
    assert_eq!(kinds.iter().filter(|&&k| k == WindowKind::Shifted).count(), 33);
    assert!(kinds.windows(2).all(|p| p[0] as u8 <= p[1] as u8));
    let json = serde_json::to_value(&plan).unwrap();
    assert_eq!(json["image"], serde_json::json!([512, 768]));
    assert_eq!(json["windows"][0], serde_json::json!({"x0": 0, "y0": 0, "w": 192, "h": 128, "kind": "grid"}));
    let back: PatchPlan = serde_json::from_value(json).unwrap();
    assert_eq!(back, plan);
}

#[test]
fn infeasible_pair_is_an_error() {
    assert!(sample_overlapping_pair(512, 768, 128, 192, 0.999, 128, 1).is_err());
    assert!(grid_windows(500, 768, 128, 192).is_err());
    assert!(random_windows(0, 512, 768, 128, 192, 16, 1).unwrap().is_empty());
    assert!(shifted_windows(540, 960, 540, 960).unwrap().is_empty());
}

proptest! {
    #[test]
    fn grid_tiles_any_divisible_image(rows in 1usize..6, cols in 1usize..6, ph in 1usize..9, pw in 1usize..9) {
        let (h, w) = (rows * ph, cols * pw);
        let grid = grid_windows(h, w, ph, pw).unwrap();
        let mut cover = vec![0u8; h * w];
        for win in &grid {
            for y in win.y0..win.y1() {
                for x in win.x0..win.x1() {
                    cover[y * w + x] += 1;
                }
            }
        }
        prop_assert!(cover.iter().all(|&c| c == 1));
        let n = shifted_windows(h, w, ph, pw).unwrap().len();
        prop_assert_eq!(n, 2 * rows * cols - rows - cols + (rows - 1) * (cols - 1));
    }

    #[test]
    fn intersection_lies_in_both(ax in 0usize..20, ay in 0usize..20, aw in 1usize..12, ah in 1usize..12,
                                 bx in 0usize..20, by in 0usize..20, bw in 1usize..12, bh in 1usize..12) {
        let a = Window::new(ax, ay, aw, ah).unwrap();
        let b = Window::new(bx, by, bw, bh).unwrap();
        match intersect(&a, &b) {
            Some(o) => {
                prop_assert!(a.contains(&o.region) && b.contains(&o.region));
                prop_assert!((o.frac - o.region.area() as f64 / a.area() as f64).abs() < 1e-15);
                prop_assert!(o.frac > 0.0 && o.frac <= 1.0);
            }
            None => {
                let ox = ax.max(bx) < (ax + aw).min(bx + bw);
                let oy = ay.max(by) < (ay + ah).min(by + bh);
                prop_assert!(!(ox && oy));
            }
        }
    }

    #[test]
    fn overlapping_pairs_meet_the_bound(seed in 0u64..10_000, frac in 0.05f64..0.9) {
        let (a, b, o) = sample_overlapping_pair(512, 768, 128, 192, frac, 16, seed).unwrap();
        prop_assert!(o.frac >= frac);
        prop_assert!(a.aligned_to(16) && b.aligned_to(16));
        prop_assert!(a.fits(512, 768) && b.fits(512, 768));
        prop_assert_eq!(intersect(&a, &b).unwrap(), o);
    }

    #[test]
    fn scale_window_rejects_misalignment(x in 0usize..64, s in 2usize..9) {
        let w = Window::new(x, 0, 8 * s, 8 * s).unwrap();
        prop_assert_eq!(scale_window(&w, s).is_ok(), x % s == 0);
    }
}
