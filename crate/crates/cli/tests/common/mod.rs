use std::path::{Path, PathBuf};

use affordance_core::data::imageio;
use affordance_core::decoder::DecoderConfig;
use affordance_core::encoders::{BackboneDims, BackboneSpec};
use affordance_core::model::ModelConfig;
use affordance_core::training::{TrainConfig, Trainer};
use ndarray::Array3;

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        backbone: BackboneSpec::Stub {
            seed: 0,
            dims: BackboneDims {
                c1: 16,
                c2: 32,
                c3: 64,
                embed: 24,
            },
        },
        decoder: Some(DecoderConfig {
            common_width: 8,
            output_width: 24,
            input_widths: [16, 32, 64],
            global_width: 24,
            ..DecoderConfig::default()
        }),
        input_size: 64,
        ..ModelConfig::default()
    }
}

/// Writes a freshly initialized checkpoint for the tiny model.
pub fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let trainer = Trainer::new(tiny_model_config(), TrainConfig::default()).unwrap();
    let path = dir.join("tiny.ckpt");
    trainer.save_checkpoint(&path).unwrap();
    path
}

pub fn test_png(h: usize, w: usize) -> Vec<u8> {
    let img = Array3::from_shape_fn((h, w, 3), |(y, x, c)| ((y * 5 + x * 3 + c * 7) % 31) as f64 / 30.0);
    imageio::encode_rgb8(&img).unwrap()
}
