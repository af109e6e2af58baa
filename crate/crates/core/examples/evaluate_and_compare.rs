//! Runs two models end to end on a synthetic export and prints the
//! comparison table from a throwaway registry.

use chrono::NaiveDate;
use ethfpt::experiment::{run_compare, run_training, ExperimentConfig, Registry};
use ethfpt::synthetic::{eth_like_series, to_kaggle_csv};
use ethfpt::train::Protocol;

fn main() -> ethfpt::Result<()> {
    let dir = std::env::temp_dir().join(format!("ethfpt-compare-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| ethfpt::Error::io(&dir, e))?;
    let csv = dir.join("eth.csv");
    let series = eth_like_series(
        600,
        NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
        5,
    );
    std::fs::write(&csv, to_kaggle_csv(&series)).map_err(|e| ethfpt::Error::io(&csv, e))?;
    let registry = Registry::at(&dir);
    for model in ["kind = \"gpt2\"\npreset = \"gpt2_toy\"", "kind = \"ann\""] {
        let text = format!(
            "[data]\ncsv = {:?}\nname = \"synthetic\"\n[model]\n{model}\n[train]\nbase_lr = 1e-3\nmax_epochs = 4\n",
            csv.display().to_string()
        );
        let resolved = ExperimentConfig::from_toml(&text)?.resolve()?;
        let run = run_training(&resolved, None, &registry)?;
        println!(
            "{} {}: test mse {:.5}",
            run.record.id, resolved.label, run.metrics.mse
        );
        let first = &run.predictions.rows[0];
        println!(
            "  {} actual ${:.2} predicted ${:.2}",
            first.date, first.actual_usd, first.pred_usd
        );
    }
    print!("{}", run_compare(&registry, Protocol::ShortTerm)?.render());
    std::fs::remove_dir_all(&dir).map_err(|e| ethfpt::Error::io(&dir, e))?;
    Ok(())
}
