//! Builds every baseline, reports its size and trains each briefly on a
//! sine-plus-trend series.

use ethfpt::baselines::{build_baseline, BaselineConfig, BaselineKind};
use ethfpt::ingest::WindowSet;
use ethfpt::model::Forecaster;
use ethfpt::synthetic::sine_trend;
use ethfpt::train::{fit, mean_loss, TrainConfig};

fn main() -> ethfpt::Result<()> {
    let values: Vec<f64> = sine_trend(400, 30.0, 0.002);
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    let all = WindowSet::from_values(&values, 7, 1, start)?;
    let n = all.len();
    let train = all.select(&(0..n * 8 / 10).collect::<Vec<_>>());
    let val = all.select(&(n * 8 / 10..n).collect::<Vec<_>>());
    let cfg = TrainConfig {
        base_lr: 1e-3,
        min_lr: 1e-5,
        max_epochs: 5,
        ..TrainConfig::default()
    };
    for kind in [
        BaselineKind::Ann,
        BaselineKind::Mlp,
        BaselineKind::Lstm,
        BaselineKind::Patchtst,
    ] {
        let mut model = build_baseline(&BaselineConfig::for_kind(kind))?;
        let before = mean_loss(&model, &val)?;
        let h = fit(&mut model, &train, &val, &cfg)?;
        println!(
            "{:<8} {:>7} weights  val mse {before:.4} -> {:.4} after {} epochs",
            model.label(),
            model.params().num_elements(),
            h.best_val_loss,
            h.epochs_run
        );
    }
    Ok(())
}
