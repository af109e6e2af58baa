//! Parses a Kaggle-format export with a missing day, fills the gap and
//! splits the series chronologically into windows.

use ethfpt::ingest::{
    chronological_split, few_shot_truncate, make_windows, parse_price_csv, regularize_daily,
    ColumnSchema, FieldRole, GapPolicy, SplitSpec,
};

const CSV: &str = r#""Date","Price","Open","High","Low","Vol.","Change %"
"Jan 14, 2021","1,218.00","1,227.33","1,247.00","1,172.70","1.31M","-0.76%"
"Jan 13, 2021","1,227.33","1,060.59","1,248.57","1,040.27","1.71M","15.72%"
"Jan 11, 2021","1,090.15","1,261.27","1,266.00","930.45","2.91M","-13.57%"
"Jan 10, 2021","1,261.27","1,276.90","1,346.74","1,167.00","1.58M","-1.22%"
"Jan 09, 2021","1,276.90","1,218.00","1,300.00","1,170.00","1.22M","4.84%"
"Jan 08, 2021","1,218.00","1,224.00","1,275.00","1,120.00","1.50M","-0.49%"
"Jan 07, 2021","1,224.00","1,208.00","1,278.00","1,171.00","1.60M","1.32%"
"Jan 06, 2021","1,208.00","1,101.00","1,210.00","1,060.00","1.70M","9.72%"
"Jan 05, 2021","1,101.00","1,041.00","1,130.00","988.00","1.90M","5.76%"
"Jan 04, 2021","1,041.00","975.00","1,155.00","890.00","2.20M","6.77%"
"Jan 03, 2021","975.00","730.00","1,010.00","716.00","2.80M","33.56%"
"Jan 02, 2021","730.00","729.00","787.00","714.00","1.30M","0.14%"
"#;

fn main() -> ethfpt::Result<()> {
    let raw = parse_price_csv(CSV.as_bytes(), &ColumnSchema::kaggle())?;
    println!("parsed {} rows, daily: {}", raw.len(), raw.is_daily());
    let daily = regularize_daily(&raw, GapPolicy::ForwardFill)?;
    for r in daily.records().iter().filter(|r| r.filled) {
        println!("filled {} with open {:.2}", r.date, r.open);
    }
    let strict = regularize_daily(&raw, GapPolicy::Strict);
    println!("strict policy: {}", strict.unwrap_err());

    let split = chronological_split(&daily, &SplitSpec::default(), 4)?;
    println!("train/val/test days: {:?}", split.sizes());
    for w in &split.warnings {
        println!("warning: {w}");
    }
    let windows = make_windows(&split.train, 3, 1, FieldRole::Open)?;
    for i in 0..windows.len() {
        println!(
            "{:?} -> {:?} (target {})",
            windows.inputs.row(i).to_vec(),
            windows.targets.row(i).to_vec(),
            windows.target_dates[i]
        );
    }
    let few = few_shot_truncate(&split.train, 0.5, 4)?;
    println!(
        "few-shot keeps {} of {} training days",
        few.len(),
        split.train.len()
    );
    Ok(())
}
