//! Fixtures shared by the benchmarks.

use patchfusion::dataio::{generate_scene, SceneConfig};
use patchfusion::inference::Pipeline;
use patchfusion::models::{init_base_params, init_fusion_params, ModelConfig};
use patchfusion::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default geometry with narrower channels.
pub fn bench_config(c0: usize) -> ModelConfig {
    ModelConfig {
        channels: vec![c0, 2 * c0, 4 * c0, 8 * c0],
        ..ModelConfig::default()
    }
}

/// Randomly initialized networks.
pub fn pipeline(config: ModelConfig, seed: u64) -> Pipeline {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Pipeline {
        coarse: init_base_params(&config, &mut rng),
        fine: init_base_params(&config, &mut rng),
        fusion: init_fusion_params(&config, &mut rng),
        config,
    }
}

/// A synthetic scene and its depth.
pub fn scene(seed: u64, h: usize, w: usize) -> (Tensor<f32>, Tensor<f32>) {
    let s = generate_scene(seed, h, w, &SceneConfig::default()).expect("valid scene dims");
    (s.image, s.depth)
}
