//! Builds GPT-2 and Llama style backbones, applies each freeze mode and
//! forecasts one batch.

use ethfpt::backbone::{apply_freeze_policy, build_backbone, BackboneConfig, FreezeMode, Variant};
use ethfpt::model::Forecaster;
use ndarray::Array2;

fn main() -> ethfpt::Result<()> {
    let batch = Array2::from_shape_fn((3, 7), |(b, t)| (b as f64 + 1.0) * (t as f64 * 0.4).sin());
    for variant in [Variant::Gpt2, Variant::Llama] {
        let config = BackboneConfig::toy(variant);
        for mode in [FreezeMode::Fpt, FreezeMode::Full, FreezeMode::LinearProbe] {
            let mut model = build_backbone(&config, 0)?;
            let params = apply_freeze_policy(&mut model, mode);
            println!(
                "{variant} {mode}: {} of {} arrays trainable ({} of {} weights)",
                params.trainable_names().len(),
                params.len(),
                params.num_trainable_elements(),
                params.num_elements()
            );
            if mode == FreezeMode::Fpt {
                println!("  trainable: {:?}", params.trainable_names());
                println!(
                    "  forecast: {:.4?}",
                    model.predict(&batch)?.column(0).to_vec()
                );
            }
        }
    }
    Ok(())
}
