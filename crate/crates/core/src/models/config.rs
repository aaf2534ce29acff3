use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Architecture shared by the base networks and the fusion network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of pyramid levels `L`; level `i` has stride `2^i`.
    pub levels: usize,
    /// Channel count per level, finest first.
    pub channels: Vec<usize>,
    /// Attention window side, in feature pixels.
    pub g2l_window: usize,
    pub g2l_heads: usize,
    pub mlp_ratio: f64,
    /// Open interval of representable depths, meters.
    pub depth_bounds: (f64, f64),
    /// Network input size `[h, w]`.
    pub patch: [usize; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            channels: vec![32, 64, 128, 256],
            g2l_window: 4,
            g2l_heads: 4,
            mlp_ratio: 2.0,
            depth_bounds: (0.5, 100.0),
            patch: [128, 192],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.levels == 0 || self.channels.len() != self.levels {
            return bad(format!(
                "{} channel entries for {} levels",
                self.channels.len(),
                self.levels
            ));
        }
        if self.channels.windows(2).any(|w| w[0] > w[1]) || self.channels.contains(&0) {
            return bad(format!("channels {:?} must be positive and ascending", self.channels));
        }
        let stride = self.coarsest_stride();
        let [ph, pw] = self.patch;
        if ph == 0 || pw == 0 || ph % stride != 0 || pw % stride != 0 {
            return bad(format!("patch {ph}x{pw} not divisible by stride {stride}"));
        }
        for i in 1..=self.levels {
            let (h, w) = self.level_dims(i);
            if self.g2l_window == 0 || h % self.g2l_window != 0 || w % self.g2l_window != 0 {
                return bad(format!(
                    "attention window {} does not divide level {i} ({h}x{w})",
                    self.g2l_window
                ));
            }
        }
        if self.g2l_heads == 0 || self.channels.iter().any(|c| c % self.g2l_heads != 0) {
            return bad(format!("{} heads do not divide channels", self.g2l_heads));
        }
        if self.mlp_ratio <= 0.0 {
            return bad("mlp_ratio must be positive".into());
        }
        let (lo, hi) = self.depth_bounds;
        if !(lo > 0.0 && hi > lo) {
            return bad(format!("depth bounds ({lo}, {hi}) invalid"));
        }
        Ok(())
    }

    /// Stride of level `L`; all training crops are aligned to it.
    pub fn coarsest_stride(&self) -> usize {
        1 << self.levels
    }

    /// Spatial dims of level `i` (1-based) for a patch-sized input.
    pub fn level_dims(&self, i: usize) -> (usize, usize) {
        (self.patch[0] >> i, self.patch[1] >> i)
    }

    pub fn channel(&self, i: usize) -> usize {
        self.channels[i - 1]
    }

    pub fn mlp_hidden(&self, c: usize) -> usize {
        ((c as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
