//! Patch and window arithmetic: placement plans, overlaps and the mapping
//! between image space and feature-map space.
//!
//! All functions here are pure; randomized placements are driven by an
//! explicit seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle; `(x0, y0)` is the inclusive top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Window {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "window ({x0},{y0},{w},{h}) has an empty side"
            )));
        }
        Ok(Self { x0, y0, w, h })
    }

    /// Whole-image window.
    pub fn full(img_h: usize, img_w: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            w: img_w,
            h: img_h,
        }
    }

    #[inline]
    pub fn x1(&self) -> usize {
        self.x0 + self.w
    }

    #[inline]
    pub fn y1(&self) -> usize {
        self.y0 + self.h
    }

    #[inline]
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn fits(&self, img_h: usize, img_w: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x1() <= img_w && self.y1() <= img_h
    }

    pub fn contains(&self, other: &Window) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1() <= self.x1() && other.y1() <= self.y1()
    }

    /// `other` expressed in this window's local coordinates.
    pub fn local(&self, other: &Window) -> Option<Window> {
        self.contains(other).then(|| Window {
            x0: other.x0 - self.x0,
            y0: other.y0 - self.y0,
            w: other.w,
            h: other.h,
        })
    }

    pub fn aligned_to(&self, stride: usize) -> bool {
        stride > 0 && [self.x0, self.y0, self.w, self.h].iter().all(|v| v % stride == 0)
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.x0, self.y0, self.w, self.h)
    }
}

/// Intersection of two windows and its area relative to the first one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub region: Window,
    pub frac: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Grid,
    Shifted,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedWindow {
    #[serde(flatten)]
    pub window: Window,
    pub kind: WindowKind,
}

/// Ordered patch placement for one image: grid (row-major), then shifted
/// grids (right, down, both), then random windows in draw order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchPlan {
    /// `[h, w]`
    pub image: [usize; 2],
    /// `[h, w]`
    pub patch: [usize; 2],
    pub windows: Vec<PlannedWindow>,
    pub seed: u64,
}

fn check_divisible(img_h: usize, img_w: usize, patch_h: usize, patch_w: usize) -> Result<(usize, usize)> {
    if patch_h == 0 || patch_w == 0 {
        return Err(Error::InvalidArgument("patch dims must be positive".into()));
    }
    if img_h % patch_h != 0 {
        return Err(Error::NotDivisible {
            axis: "height",
            size: img_h,
            divisor: patch_h,
        });
    }
    if img_w % patch_w != 0 {
        return Err(Error::NotDivisible {
            axis: "width",
            size: img_w,
            divisor: patch_w,
        });
    }
    Ok((img_h / patch_h, img_w / patch_w))
}

/// Non-overlapping tiling of the image in row-major order.
pub fn grid_windows(img_h: usize, img_w: usize, patch_h: usize, patch_w: usize) -> Result<Vec<Window>> {
    let (rows, cols) = check_divisible(img_h, img_w, patch_h, patch_w)?;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(Window {
                x0: c * patch_w,
                y0: r * patch_h,
                w: patch_w,
                h: patch_h,
            });
        }
    }
    Ok(out)
}

/// The three half-stride interior grids: right-shifted, down-shifted and
/// shifted along both axes, each in row-major order.
pub fn shifted_windows(img_h: usize, img_w: usize, patch_h: usize, patch_w: usize) -> Result<Vec<Window>> {
    let (rows, cols) = check_divisible(img_h, img_w, patch_h, patch_w)?;
    let (hy, hx) = (patch_h / 2, patch_w / 2);
    let mut out = Vec::new();
    let mut push_grid = |n_r: usize, n_c: usize, dy: usize, dx: usize| {
        for r in 0..n_r {
            for c in 0..n_c {
                out.push(Window {
                    x0: c * patch_w + dx,
                    y0: r * patch_h + dy,
                    w: patch_w,
                    h: patch_h,
                });
            }
        }
    };
    push_grid(rows, cols.saturating_sub(1), 0, hx);
    push_grid(rows.saturating_sub(1), cols, hy, 0);
    push_grid(rows.saturating_sub(1), cols.saturating_sub(1), hy, hx);
    Ok(out)
}

fn check_alignment(img_h: usize, img_w: usize, patch_h: usize, patch_w: usize, align: usize) -> Result<()> {
    if patch_h == 0 || patch_w == 0 {
        return Err(Error::InvalidArgument("patch dims must be positive".into()));
    }
    if align == 0 || patch_h % align != 0 || patch_w % align != 0 {
        return Err(Error::InvalidArgument(format!(
            "alignment {align} must divide patch dims {patch_h}x{patch_w}"
        )));
    }
    if patch_h > img_h || patch_w > img_w {
        return Err(Error::InvalidArgument(format!(
            "patch {patch_h}x{patch_w} larger than image {img_h}x{img_w}"
        )));
    }
    Ok(())
}

/// Number of aligned offsets along one axis.
fn aligned_positions(img: usize, patch: usize, align: usize) -> usize {
    (img - patch) / align + 1
}

/// Draws one aligned window uniformly from `rng`.
pub fn random_window_with(
    rng: &mut impl Rng,
    img_h: usize,
    img_w: usize,
    patch_h: usize,
    patch_w: usize,
    align: usize,
) -> Result<Window> {
    check_alignment(img_h, img_w, patch_h, patch_w, align)?;
    let ny = aligned_positions(img_h, patch_h, align);
    let nx = aligned_positions(img_w, patch_w, align);
    Ok(Window {
        x0: rng.random_range(0..nx) * align,
        y0: rng.random_range(0..ny) * align,
        w: patch_w,
        h: patch_h,
    })
}

/// `n` aligned windows with uniformly drawn offsets; a pure function of its arguments.
pub fn random_windows(
    n: usize,
    img_h: usize,
    img_w: usize,
    patch_h: usize,
    patch_w: usize,
    align: usize,
    seed: u64,
) -> Result<Vec<Window>> {
    check_alignment(img_h, img_w, patch_h, patch_w, align)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| random_window_with(&mut rng, img_h, img_w, patch_h, patch_w, align))
        .collect()
}

/// Exact integer intersection; `None` when the shared area is zero.
pub fn intersect(a: &Window, b: &Window) -> Option<Overlap> {
    let x0 = a.x0.max(b.x0);
    let y0 = a.y0.max(b.y0);
    let x1 = a.x1().min(b.x1());
    let y1 = a.y1().min(b.y1());
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    let region = Window {
        x0,
        y0,
        w: x1 - x0,
        h: y1 - y0,
    };
    Some(Overlap {
        region,
        frac: region.area() as f64 / a.area() as f64,
    })
}

/// Divides every coordinate by `stride`.
pub fn scale_window(w: &Window, stride: usize) -> Result<Window> {
    if !w.aligned_to(stride) {
        return Err(Error::Misaligned(w.to_string(), stride));
    }
    Ok(Window {
        x0: w.x0 / stride,
        y0: w.y0 / stride,
        w: w.w / stride,
        h: w.h / stride,
    })
}

/// Two distinct aligned windows overlapping by at least `min_frac` of a patch.
#[allow(clippy::too_many_arguments)]
pub fn sample_overlapping_pair_with(
    rng: &mut impl Rng,
    img_h: usize,
    img_w: usize,
    patch_h: usize,
    patch_w: usize,
    min_frac: f64,
    align: usize,
) -> Result<(Window, Window, Overlap)> {
    if !(min_frac > 0.0 && min_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "min_frac {min_frac} must lie in (0, 1)"
        )));
    }
    check_alignment(img_h, img_w, patch_h, patch_w, align)?;
    let ny = aligned_positions(img_h, patch_h, align);
    let nx = aligned_positions(img_w, patch_w, align);
    let at = |i: usize, j: usize| Window {
        x0: j * align,
        y0: i * align,
        w: patch_w,
        h: patch_h,
    };
    // Largest admissible offsets in units of `align` for the overlap bound.
    let max_di = patch_h / align;
    let max_dj = patch_w / align;
    let partners = |first: &Window, fi: usize, fj: usize| -> Vec<(Window, Overlap)> {
        let mut v = Vec::new();
        for i in fi.saturating_sub(max_di)..(fi + max_di + 1).min(ny) {
            for j in fj.saturating_sub(max_dj)..(fj + max_dj + 1).min(nx) {
                if (i, j) == (fi, fj) {
                    continue;
                }
                let second = at(i, j);
                if let Some(ov) = intersect(first, &second) {
                    if ov.frac >= min_frac {
                        v.push((second, ov));
                    }
                }
            }
        }
        v
    };
    let (fi, fj) = (rng.random_range(0..ny), rng.random_range(0..nx));
    let first = at(fi, fj);
    let mut cands = partners(&first, fi, fj);
    if cands.is_empty() {
        // Fall back to scanning for any feasible first window, in order.
        for i in 0..ny {
            for j in 0..nx {
                let f = at(i, j);
                let c = partners(&f, i, j);
                if !c.is_empty() {
                    let (second, ov) = c[rng.random_range(0..c.len())];
                    return Ok((f, second, ov));
                }
            }
        }
        return Err(Error::Infeasible(format!(
            "no aligned pair of {patch_h}x{patch_w} patches in {img_h}x{img_w} overlaps by {min_frac}"
        )));
    }
    let (second, ov) = cands.swap_remove(rng.random_range(0..cands.len()));
    Ok((first, second, ov))
}

/// Seeded form of [`sample_overlapping_pair_with`].
#[allow(clippy::too_many_arguments)]
pub fn sample_overlapping_pair(
    img_h: usize,
    img_w: usize,
    patch_h: usize,
    patch_w: usize,
    min_frac: f64,
    align: usize,
    seed: u64,
) -> Result<(Window, Window, Overlap)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_overlapping_pair_with(&mut rng, img_h, img_w, patch_h, patch_w, min_frac, align)
}

/// Windows of the half-stride lattice (grid plus shifted grids, sorted
/// row-major by position) and the index pairs of horizontally or vertically
/// adjacent windows, which overlap by half a patch.
pub fn half_overlap_pairs(
    img_h: usize,
    img_w: usize,
    patch_h: usize,
    patch_w: usize,
) -> Result<(Vec<Window>, Vec<(usize, usize)>)> {
    let (rows, cols) = check_divisible(img_h, img_w, patch_h, patch_w)?;
    let (lr, lc) = (2 * rows - 1, 2 * cols - 1);
    let mut windows = Vec::with_capacity(lr * lc);
    for i in 0..lr {
        for j in 0..lc {
            windows.push(Window {
                x0: j * (patch_w / 2),
                y0: i * (patch_h / 2),
                w: patch_w,
                h: patch_h,
            });
        }
    }
    let mut pairs = Vec::new();
    for i in 0..lr {
        for j in 0..lc {
            if j + 1 < lc {
                pairs.push((i * lc + j, i * lc + j + 1));
            }
            if i + 1 < lr {
                pairs.push((i * lc + j, (i + 1) * lc + j));
            }
        }
    }
    Ok((windows, pairs))
}

impl PatchPlan {
    fn with_kind(windows: Vec<Window>, kind: WindowKind) -> impl Iterator<Item = PlannedWindow> {
        windows.into_iter().map(move |window| PlannedWindow { window, kind })
    }

    /// The non-overlapping grid only.
    pub fn grid(img_h: usize, img_w: usize, patch_h: usize, patch_w: usize) -> Result<Self> {
        Ok(Self {
            image: [img_h, img_w],
            patch: [patch_h, patch_w],
            windows: Self::with_kind(grid_windows(img_h, img_w, patch_h, patch_w)?, WindowKind::Grid).collect(),
            seed: 0,
        })
    }

    /// Grid followed by the shifted grids.
    pub fn grid_and_shifted(img_h: usize, img_w: usize, patch_h: usize, patch_w: usize) -> Result<Self> {
        let mut plan = Self::grid(img_h, img_w, patch_h, patch_w)?;
        plan.windows.extend(Self::with_kind(
            shifted_windows(img_h, img_w, patch_h, patch_w)?,
            WindowKind::Shifted,
        ));
        Ok(plan)
    }

    /// Grid, shifted grids, then `n` random aligned windows.
    pub fn with_random(
        img_h: usize,
        img_w: usize,
        patch_h: usize,
        patch_w: usize,
        n: usize,
        align: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut plan = Self::grid_and_shifted(img_h, img_w, patch_h, patch_w)?;
        plan.windows.extend(Self::with_kind(
            random_windows(n, img_h, img_w, patch_h, patch_w, align, seed)?,
            WindowKind::Random,
        ));
        plan.seed = seed;
        Ok(plan)
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn grid_part(&self) -> impl Iterator<Item = &Window> {
        self.windows
            .iter()
            .filter(|w| w.kind == WindowKind::Grid)
            .map(|w| &w.window)
    }

    /// True when the grid windows are disjoint, inside the image and cover it.
    pub fn grid_tiles_image(&self) -> bool {
        let [h, w] = self.image;
        let grid: Vec<&Window> = self.grid_part().collect();
        if grid.iter().any(|g| !g.fits(h, w)) {
            return false;
        }
        let area: usize = grid.iter().map(|g| g.area()).sum();
        if area != h * w {
            return false;
        }
        for (i, a) in grid.iter().enumerate() {
            for b in &grid[i + 1..] {
                if intersect(a, b).is_some() {
                    return false;
                }
            }
        }
        true
    }
}
