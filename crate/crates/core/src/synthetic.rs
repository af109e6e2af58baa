//! Seeded synthetic price data for tests, examples and smoke runs.

use chrono::{Days, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::{PriceRecord, PriceSeries};

/// `len` values of `sin(2πi/period) + slope·i`.
pub fn sine_trend(len: usize, period: f64, slope: f64) -> Vec<f64> {
    (0..len)
        .map(|i| (std::f64::consts::TAU * i as f64 / period).sin() + slope * i as f64)
        .collect()
}

/// A daily OHLCV series shaped like ETH/USD: log price reverting towards a
/// slow boom-and-bust cycle between roughly $50 and $2000, with volatility
/// clustering. Starts at `start`.
pub fn eth_like_series(days: usize, start: NaiveDate, seed: u64) -> PriceSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
    let level = |i: usize| 300f64.ln() - 1.6 * (std::f64::consts::TAU * i as f64 / 1500.0).cos();
    let mut log_price = level(0);
    let mut vol: f64 = 0.04;
    let mut records = Vec::with_capacity(days);
    let mut prev_close = log_price.exp();
    for i in 0..days {
        vol = (0.9 * vol + 0.1 * 0.04 + 0.01 * unit.sample(&mut rng).abs()).clamp(0.01, 0.12);
        log_price +=
            0.01 * (level(i) - log_price) + (level(i + 1) - level(i)) + vol * unit.sample(&mut rng);
        let open = prev_close;
        let close = log_price.exp();
        let spread = vol * 0.5 * unit.sample(&mut rng).abs();
        let high = open.max(close) * (1.0 + spread);
        let low = open.min(close) * (1.0 - spread).max(0.5);
        let volume = 1e5 * (1.0 + 3.0 * vol / 0.04) * (1.0 + 0.2 * unit.sample(&mut rng)).abs();
        records.push(PriceRecord {
            date: start + Days::new(i as u64),
            open,
            high,
            low,
            close,
            volume,
            change_pct: 100.0 * (close / open - 1.0),
            filled: false,
        });
        prev_close = close;
    }
    PriceSeries::new(records).expect("dates increase")
}

/// Renders a series in the `Date,Price,Open,High,Low,Vol.,Change %` export
/// layout, newest row first, with thousands separators and `K`/`M` volumes.
pub fn to_kaggle_csv(series: &PriceSeries) -> String {
    fn money(v: f64) -> String {
        let s = format!("{v:.2}");
        let (int, frac) = s.split_once('.').expect("two decimals");
        let mut grouped = String::new();
        for (i, ch) in int.chars().enumerate() {
            if i > 0 && (int.len() - i) % 3 == 0 {
                grouped.push(',');
            }
            grouped.push(ch);
        }
        format!("{grouped}.{frac}")
    }
    fn volume(v: f64) -> String {
        if v >= 1e6 {
            format!("{:.2}M", v / 1e6)
        } else {
            format!("{:.2}K", v / 1e3)
        }
    }
    let mut out =
        String::from("\"Date\",\"Price\",\"Open\",\"High\",\"Low\",\"Vol.\",\"Change %\"\n");
    for r in series.records().iter().rev() {
        out.push_str(&format!(
            "\"{}\",\"{}\",\"{}\",\"{}\",\"{}\",\"{}\",\"{:.2}%\"\n",
            r.date.format("%b %d, %Y"),
            money(r.close),
            money(r.open),
            money(r.high),
            money(r.low),
            volume(r.volume),
            r.change_pct
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_price_csv, ColumnSchema};

    #[test]
    fn series_is_valid_and_reproducible() {
        let start = NaiveDate::from_ymd_opt(2016, 3, 10).unwrap();
        let a = eth_like_series(400, start, 1);
        assert_eq!(a, eth_like_series(400, start, 1));
        assert!(a.is_daily());
        for r in a.records() {
            r.validate().unwrap();
        }
    }

    #[test]
    fn kaggle_rendering_parses_back() {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let s = eth_like_series(1500, start, 2);
        let text = to_kaggle_csv(&s);
        let back = parse_price_csv(text.as_bytes(), &ColumnSchema::kaggle()).unwrap();
        assert_eq!(back.len(), s.len());
        assert_eq!(back.dates(), s.dates());
        for (a, b) in back.records().iter().zip(s.records()) {
            assert!((a.open - b.open).abs() <= 0.005 + 1e-9);
        }
    }
}
