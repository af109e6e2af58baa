//! Writes a synthetic ETH-like daily series in the Kaggle export layout.
//!
//! cargo run --example synthetic_dataset -- data/synthetic_eth.csv 2400

use chrono::NaiveDate;
use ethfpt::synthetic::{eth_like_series, to_kaggle_csv};

fn main() -> ethfpt::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| "data/synthetic_eth.csv".into());
    let days: usize = args.next().and_then(|d| d.parse().ok()).unwrap_or(2400);
    let start = NaiveDate::from_ymd_opt(2016, 3, 10).expect("valid date");
    let series = eth_like_series(days, start, 42);
    if let Some(dir) = std::path::Path::new(&path).parent() {
        std::fs::create_dir_all(dir).map_err(|e| ethfpt::Error::io(dir, e))?;
    }
    std::fs::write(&path, to_kaggle_csv(&series)).map_err(|e| ethfpt::Error::io(&path, e))?;
    println!(
        "{} days, {} .. {}, written to {path}",
        series.len(),
        series.first_date(),
        series.last_date()
    );
    Ok(())
}
