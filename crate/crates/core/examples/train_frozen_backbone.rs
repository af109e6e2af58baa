//! Trains a toy GPT-2 backbone with its attention and feed-forward blocks
//! frozen and checks that the frozen weights never moved.

use ethfpt::backbone::{apply_freeze_policy, build_backbone, BackboneConfig, FreezeMode, Variant};
use ethfpt::ingest::WindowSet;
use ethfpt::model::Forecaster;
use ethfpt::synthetic::sine_trend;
use ethfpt::train::{cosine_lr, fit, TrainConfig};

fn main() -> ethfpt::Result<()> {
    let values = sine_trend(300, 25.0, 0.003);
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    let all = WindowSet::from_values(&values, 7, 1, start)?;
    let n = all.len();
    let train = all.select(&(0..n * 7 / 8).collect::<Vec<_>>());
    let val = all.select(&(n * 7 / 8..n).collect::<Vec<_>>());

    let mut model = build_backbone(&BackboneConfig::toy(Variant::Gpt2), 3)?;
    apply_freeze_policy(&mut model, FreezeMode::Fpt);
    let frozen_before = model.params().snapshot(false);
    let cfg = TrainConfig {
        base_lr: 1e-3,
        min_lr: 1e-5,
        max_epochs: 6,
        accum_steps: 2,
        ..TrainConfig::default()
    };
    let history = fit(&mut model, &train, &val, &cfg)?;
    for e in &history.epochs {
        println!(
            "epoch {} lr {:.2e} train {:.5} val {:.5}",
            e.epoch, e.lr, e.train_loss, e.val_loss
        );
    }
    println!(
        "schedule endpoints {:.2e} .. {:.2e}",
        cosine_lr(0, &cfg)?,
        cosine_lr(cfg.max_epochs, &cfg)?
    );
    let after = model.params();
    let moved = after
        .frozen_names()
        .into_iter()
        .filter(|n| after.get(n).ok() != frozen_before.get(*n))
        .count();
    println!(
        "{} optimizer steps, best epoch {:?}, frozen arrays changed: {moved}",
        history.optimizer_steps, history.best_epoch
    );
    Ok(())
}
