//! Synthetic RGB-D scenes, depth and image files, dataset manifests,
//! SSIM-based sample filtering and resizing.

mod dataset;
mod io;
mod resize;
mod scene;
mod ssim;

pub use dataset::{generate_dataset, MANIFEST_FILE, DatasetManifest, DatasetSpec, DiskDataset, SampleSource, Split};
pub use io::{
    load_depth, load_image, png16_sidecar, save_depth, save_depth_visualization, save_image, DepthFormat,
    PNG16_DEFAULT_SCALE,
};
pub use resize::{resize, ResizeMode};
pub use scene::{generate_labeled_scene, generate_scene, LabeledScene, SceneConfig};
pub use ssim::{grayscale, ssim, stereo_reconstruction_ssim, SSIM_THRESHOLD, SSIM_WINDOW};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An RGB image (`[3, H, W]`, values in `[0, 1]`), its metric depth
/// (`[H, W]`, meters) and the validity mask of the depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub depth: Tensor<f32>,
    pub mask: Vec<bool>,
}

impl Sample {
    /// Builds a sample whose mask marks finite, positive depth.
    pub fn new(id: impl Into<String>, image: Tensor<f32>, depth: Tensor<f32>) -> Result<Self> {
        let mask = depth.data().iter().map(|d| d.is_finite() && *d > 0.0).collect();
        let s = Self {
            id: id.into(),
            image,
            depth,
            mask,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn dims(&self) -> (usize, usize) {
        let s = self.depth.shape();
        (s[0], s[1])
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.image.chw()?;
        if c != 3 || self.image.shape().len() != 3 {
            return Err(Error::Shape(format!("image {:?} is not [3, H, W]", self.image.shape())));
        }
        if self.depth.hw()? != (h, w) || self.mask.len() != h * w {
            return Err(Error::Shape(format!(
                "{}: image {h}x{w}, depth {:?}, mask {}",
                self.id,
                self.depth.shape(),
                self.mask.len()
            )));
        }
        for (i, (&m, &d)) in self.mask.iter().zip(self.depth.data()).enumerate() {
            if m && !(d.is_finite() && d > 0.0) {
                return Err(Error::InvalidArgument(format!("{}: masked depth {d} at index {i}", self.id)));
            }
        }
        if !self.image.all_finite() {
            return Err(Error::NonFinite(format!("{}: image", self.id)));
        }
        Ok(())
    }

    /// Mirror image of the sample.
    pub fn flip_horizontal(&self) -> Self {
        let (_, w) = self.dims();
        let mut mask = self.mask.clone();
        for row in mask.chunks_mut(w) {
            row.reverse();
        }
        Self {
            id: self.id.clone(),
            image: self.image.flip_horizontal(),
            depth: self.depth.flip_horizontal(),
            mask,
        }
    }
}

/// Mixes a base seed with a path of integers into an independent seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut s = base;
    for &p in path {
        s ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(s << 6).wrapping_add(s >> 2);
        s = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = s;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        s = z ^ (z >> 31);
    }
    s
}
