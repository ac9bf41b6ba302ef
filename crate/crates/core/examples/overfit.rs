//! Overfits the decoder on a small synthetic suite and reports loss and IoU.
//!
//! `cargo run --release -p affordance-core --example overfit -- [lr] [steps] [levels]`

use std::sync::Arc;

use affordance_core::decoder::{ActiveLevels, DecoderConfig};
use affordance_core::encoders::BackboneDims;
use affordance_core::model::ModelConfig;
use affordance_core::training::{fit_quality, TrainConfig, TrainData, Trainer};

fn main() -> affordance_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map_or(1e-3, |s| s.parse().unwrap());
    let steps: usize = args.get(2).map_or(500, |s| s.parse().unwrap());
    let levels: ActiveLevels = args.get(3).map_or(ActiveLevels::ALL, |s| s.parse().unwrap());
    let model = ModelConfig {
        input_size: 64,
        decoder: Some(DecoderConfig {
            active_levels: levels,
            ..DecoderConfig::for_backbone(BackboneDims::default())
        }),
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        learning_rate: lr,
        batch_size: 8,
        epochs: steps.div_ceil(2),
        max_steps: Some(steps),
        log_every: 50,
        ..TrainConfig::default()
    };
    let data = TrainData::synthetic(0, 16, 64)?;
    let TrainData::InMemory(samples) = data.clone() else { unreachable!() };
    let mut trainer = Trainer::new(model, train)?;
    let report = trainer.run(Arc::new(data), None)?;
    for (s, l) in report.losses.iter().filter(|(s, _)| s % 50 == 0) {
        println!("step {s} loss {l:.5}");
    }
    let q = fit_quality(&trainer.into_model()?, &samples, 0.5)?;
    println!("elapsed {:.1}s eval loss {:.5} iou {:.4}", report.elapsed_secs, q.loss, q.iou);
    Ok(())
}
