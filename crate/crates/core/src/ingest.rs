//! Daily OHLCV ingestion.
//!
//! Parses exchange CSV exports into a [`PriceSeries`], regularizes them onto a
//! strict one-record-per-day grid, splits them chronologically into
//! train/validation/test segments and cuts sliding-window datasets.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when turning `ratio * n` into an integer count, so that
/// products like `0.1 * 1000 = 100.00000000000001` land on the intended value.
const COUNT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceRecord {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    /// Day-over-day change as a fraction (`0.0125` for `1.25%`).
    pub change_pct: f64,
    /// True when the row was imputed by [`regularize_daily`].
    pub filled: bool,
}

impl PriceRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| {
            Err(Error::InvalidRecord {
                date: self.date,
                message,
            })
        };
        let fields = [
            self.open,
            self.high,
            self.low,
            self.close,
            self.volume,
            self.change_pct,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        if self.open <= 0.0 {
            return bad(format!("open must be positive, got {}", self.open));
        }
        if self.high < self.open.max(self.close) {
            return bad(format!(
                "high {} below max(open, close) {}",
                self.high,
                self.open.max(self.close)
            ));
        }
        if self.low > self.open.min(self.close) {
            return bad(format!(
                "low {} above min(open, close) {}",
                self.low,
                self.open.min(self.close)
            ));
        }
        if self.volume < 0.0 {
            return bad(format!("negative volume {}", self.volume));
        }
        Ok(())
    }

    pub fn value(&self, role: FieldRole) -> f64 {
        match role {
            FieldRole::Open => self.open,
            FieldRole::High => self.high,
            FieldRole::Low => self.low,
            FieldRole::Close => self.close,
            FieldRole::Volume => self.volume,
            FieldRole::Change => self.change_pct,
        }
    }
}

/// Numeric channels of a [`PriceRecord`] that can feed a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRole {
    #[default]
    Open,
    High,
    Low,
    Close,
    Volume,
    Change,
}

impl FromStr for FieldRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "open" => Ok(Self::Open),
            "high" => Ok(Self::High),
            "low" => Ok(Self::Low),
            "close" | "price" => Ok(Self::Close),
            "volume" => Ok(Self::Volume),
            "change" | "change_pct" => Ok(Self::Change),
            other => Err(Error::Config(format!("unknown channel `{other}`"))),
        }
    }
}

impl fmt::Display for FieldRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Open => "open",
            Self::High => "high",
            Self::Low => "low",
            Self::Close => "close",
            Self::Volume => "volume",
            Self::Change => "change",
        };
        f.write_str(s)
    }
}

/// Maps canonical roles onto the column names of a particular CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub date: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: Option<String>,
    pub change: Option<String>,
    pub filled: Option<String>,
}

impl ColumnSchema {
    /// Columns written by [`write_price_csv`].
    pub fn canonical() -> Self {
        Self {
            date: "date".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: Some("volume".into()),
            change: Some("change_pct".into()),
            filled: Some("filled".into()),
        }
    }

    /// Investing.com-style export used by the public Kaggle ETH dataset:
    /// `Date,Price,Open,High,Low,Vol.,Change %`.
    pub fn kaggle() -> Self {
        Self {
            date: "Date".into(),
            open: "Open".into(),
            high: "High".into(),
            low: "Low".into(),
            close: "Price".into(),
            volume: Some("Vol.".into()),
            change: Some("Change %".into()),
            filled: None,
        }
    }
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self::canonical()
    }
}

/// A date-sorted sequence of daily records.
///
/// Construction only checks ordering; strict one-day spacing is established by
/// [`regularize_daily`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    records: Vec<PriceRecord>,
}

impl PriceSeries {
    pub fn new(records: Vec<PriceRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("price series has no records".into()));
        }
        if let Some(w) = records.windows(2).find(|w| w[1].date < w[0].date) {
            return Err(Error::Config(format!(
                "records out of order: {} follows {}",
                w[1].date, w[0].date
            )));
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[PriceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first_date(&self) -> NaiveDate {
        self.records[0].date
    }

    pub fn last_date(&self) -> NaiveDate {
        self.records[self.records.len() - 1].date
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.records.iter().map(|r| r.date).collect()
    }

    pub fn values(&self, role: FieldRole) -> Vec<f64> {
        self.records.iter().map(|r| r.value(role)).collect()
    }

    /// True when dates are strictly increasing in steps of exactly one day.
    pub fn is_daily(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[0].date.succ_opt() == Some(w[1].date))
    }

    /// Sub-series over `range`; the range must be non-empty.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > self.len() {
            return Err(Error::EmptyInput(format!(
                "slice {range:?} of a {}-record series",
                self.len()
            )));
        }
        Ok(Self {
            records: self.records[range].to_vec(),
        })
    }

    /// SHA-256 over the canonical CSV rendering, hex encoded.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut buf = Vec::new();
        write_price_csv(self, &mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

fn parse_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(raw, "%b %d, %Y"))
        .ok()
}

/// Parses a numeric cell, stripping thousands separators, currency and percent
/// signs, and expanding `K`/`M`/`B` magnitude suffixes. A percent sign turns
/// the value into a fraction.
fn parse_number(raw: &str) -> Option<f64> {
    let mut s: String = raw
        .trim()
        .chars()
        .filter(|c| !matches!(c, ',' | '$' | ' '))
        .collect();
    let mut scale = 1.0;
    if s.ends_with('%') {
        s.pop();
        scale = 0.01;
    } else if let Some(last) = s.chars().last() {
        let mult = match last.to_ascii_uppercase() {
            'K' => Some(1e3),
            'M' => Some(1e6),
            'B' => Some(1e9),
            _ => None,
        };
        if let Some(m) = mult {
            s.pop();
            scale = m;
        }
    }
    let v: f64 = s.parse().ok()?;
    v.is_finite().then_some(v * scale)
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" | "" => Some(false),
        _ => None,
    }
}

/// Parses a daily OHLCV CSV with a header row into a date-ascending series.
///
/// Row numbers in errors are 1-based and count the header as row 1.
pub fn parse_price_csv<R: Read>(stream: R, schema: &ColumnSchema) -> Result<PriceSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(stream);
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| Error::Schema(name.to_string()))
    };
    let date_ix = find(&schema.date)?;
    let open_ix = find(&schema.open)?;
    let high_ix = find(&schema.high)?;
    let low_ix = find(&schema.low)?;
    let close_ix = find(&schema.close)?;
    let volume_ix = schema.volume.as_deref().map(find).transpose()?;
    let change_ix = schema.change.as_deref().map(find).transpose()?;
    let filled_ix = schema.filled.as_deref().map(find).transpose()?;

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 2;
        let row = row.map_err(|e| Error::Parse {
            row: row_no,
            message: e.to_string(),
        })?;
        let cell = |ix: usize| row.get(ix).unwrap_or("");
        let number = |ix: usize, what: &str| -> Result<f64> {
            parse_number(cell(ix)).ok_or_else(|| Error::Parse {
                row: row_no,
                message: format!("cannot parse {what} from `{}`", cell(ix)),
            })
        };
        let date = parse_date(cell(date_ix)).ok_or_else(|| Error::Parse {
            row: row_no,
            message: format!("cannot parse date from `{}`", cell(date_ix)),
        })?;
        let record = PriceRecord {
            date,
            open: number(open_ix, "open")?,
            high: number(high_ix, "high")?,
            low: number(low_ix, "low")?,
            close: number(close_ix, "close")?,
            volume: volume_ix
                .map(|ix| number(ix, "volume"))
                .transpose()?
                .unwrap_or(0.0),
            change_pct: change_ix
                .map(|ix| number(ix, "change"))
                .transpose()?
                .unwrap_or(0.0),
            filled: match filled_ix {
                Some(ix) => parse_bool(cell(ix)).ok_or_else(|| Error::Parse {
                    row: row_no,
                    message: format!("cannot parse filled flag from `{}`", cell(ix)),
                })?,
                None => false,
            },
        };
        record.validate()?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(
            "CSV has a header but no data rows".into(),
        ));
    }
    records.sort_by_key(|r| r.date);
    PriceSeries::new(records)
}

/// Writes the canonical CSV form: ISO dates, plain decimals and a trailing
/// `filled` column.
pub fn write_price_csv<W: Write>(series: &PriceSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "date",
        "open",
        "high",
        "low",
        "close",
        "volume",
        "change_pct",
        "filled",
    ])?;
    for r in series.records() {
        w.write_record([
            r.date.format("%Y-%m-%d").to_string(),
            r.open.to_string(),
            r.high.to_string(),
            r.low.to_string(),
            r.close.to_string(),
            r.volume.to_string(),
            r.change_pct.to_string(),
            r.filled.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Missing days copy the previous day's prices with zero volume.
    #[default]
    ForwardFill,
    /// Any missing day is an error.
    Strict,
}

impl FromStr for GapPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward_fill" | "ffill" => Ok(Self::ForwardFill),
            "strict" => Ok(Self::Strict),
            other => Err(Error::Config(format!("unknown gap policy `{other}`"))),
        }
    }
}

/// Puts the series on a strict daily grid between its first and last date.
pub fn regularize_daily(series: &PriceSeries, policy: GapPolicy) -> Result<PriceSeries> {
    let recs = series.records();
    if let Some(w) = recs.windows(2).find(|w| w[0].date == w[1].date) {
        return Err(Error::DuplicateDate(w[0].date));
    }
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(recs.len());
    out.push(recs[0]);
    for next in &recs[1..] {
        let prev = *out.last().expect("non-empty");
        let mut day = prev.date + Days::new(1);
        while day < next.date {
            missing.push(day);
            out.push(PriceRecord {
                date: day,
                volume: 0.0,
                change_pct: 0.0,
                filled: true,
                ..prev
            });
            day = day + Days::new(1);
        }
        out.push(*next);
    }
    if policy == GapPolicy::Strict && !missing.is_empty() {
        return Err(Error::Continuity { missing });
    }
    PriceSeries::new(out)
}

/// Fractions of the series assigned to each chronological segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
}

impl SplitSpec {
    pub fn new(train_ratio: f64, val_ratio: f64, test_ratio: f64) -> Result<Self> {
        let spec = Self {
            train_ratio,
            val_ratio,
            test_ratio,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("train_ratio", self.train_ratio),
            ("val_ratio", self.val_ratio),
            ("test_ratio", self.test_ratio),
        ] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::SplitSpec(format!("{name} = {r} is not in (0, 1)")));
            }
        }
        let sum = self.train_ratio + self.val_ratio + self.test_ratio;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::SplitSpec(format!("ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    /// 70% train, 10% validation, 20% test.
    fn default() -> Self {
        Self {
            train_ratio: 0.7,
            val_ratio: 0.1,
            test_ratio: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: PriceSeries,
    pub val: PriceSeries,
    pub test: PriceSeries,
    /// Segments too short to yield a single window.
    pub warnings: Vec<String>,
}

impl Split {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Contiguous train → val → test split. `window_len` (`seq_len + pred_len`,
/// or 0) only drives the warnings attached to the result.
pub fn chronological_split(
    series: &PriceSeries,
    spec: &SplitSpec,
    window_len: usize,
) -> Result<Split> {
    spec.validate()?;
    let n = series.len();
    if n < 10 {
        return Err(Error::InsufficientData {
            required: 10,
            actual: n,
        });
    }
    let n_train = (spec.train_ratio * n as f64 + COUNT_SLACK).floor() as usize;
    let n_val = (spec.val_ratio * n as f64 + COUNT_SLACK).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::SplitSpec(format!(
            "ratios leave an empty segment for {n} records"
        )));
    }
    let train = series.slice(0..n_train)?;
    let val = series.slice(n_train..n_train + n_val)?;
    let test = series.slice(n_train + n_val..n)?;
    let warnings = [("train", &train), ("val", &val), ("test", &test)]
        .into_iter()
        .filter(|(_, s)| s.len() < window_len)
        .map(|(name, s)| {
            format!(
                "{name} segment has {} timesteps, fewer than one window ({window_len})",
                s.len()
            )
        })
        .collect();
    Ok(Split {
        train,
        val,
        test,
        warnings,
    })
}

/// Sliding (input, target) pairs with stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    /// `count × seq_len`
    pub inputs: Array2<f64>,
    /// `count × pred_len`
    pub targets: Array2<f64>,
    /// Start offset of each window inside its source segment.
    pub origin_indices: Vec<usize>,
    /// Date of the first target step of each window.
    pub target_dates: Vec<NaiveDate>,
    pub seq_len: usize,
    pub pred_len: usize,
}

impl WindowSet {
    /// Windows over a bare value sequence whose first element falls on `start`.
    pub fn from_values(
        values: &[f64],
        seq_len: usize,
        pred_len: usize,
        start: NaiveDate,
    ) -> Result<Self> {
        if seq_len == 0 || pred_len == 0 {
            return Err(Error::Config(format!(
                "seq_len ({seq_len}) and pred_len ({pred_len}) must be positive"
            )));
        }
        let span = seq_len + pred_len;
        if values.len() < span {
            return Err(Error::InsufficientData {
                required: span,
                actual: values.len(),
            });
        }
        let count = values.len() - span + 1;
        let inputs = Array2::from_shape_fn((count, seq_len), |(k, j)| values[k + j]);
        let targets = Array2::from_shape_fn((count, pred_len), |(k, j)| values[k + seq_len + j]);
        let target_dates = (0..count)
            .map(|k| start + Days::new((k + seq_len) as u64))
            .collect();
        Ok(Self {
            inputs,
            targets,
            origin_indices: (0..count).collect(),
            target_dates,
            seq_len,
            pred_len,
        })
    }

    /// A set with no windows, e.g. for a validation segment shorter than
    /// one window.
    pub fn empty(seq_len: usize, pred_len: usize) -> Self {
        Self {
            inputs: Array2::zeros((0, seq_len)),
            targets: Array2::zeros((0, pred_len)),
            origin_indices: Vec::new(),
            target_dates: Vec::new(),
            seq_len,
            pred_len,
        }
    }

    pub fn len(&self) -> usize {
        self.origin_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin_indices.is_empty()
    }

    /// Applies `f` to every input and target value.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            inputs: self.inputs.mapv(&f),
            targets: self.targets.mapv(&f),
            ..self.clone()
        }
    }

    /// Windows at the given positions, in that order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(ndarray::Axis(0), rows),
            targets: self.targets.select(ndarray::Axis(0), rows),
            origin_indices: rows.iter().map(|&r| self.origin_indices[r]).collect(),
            target_dates: rows.iter().map(|&r| self.target_dates[r]).collect(),
            seq_len: self.seq_len,
            pred_len: self.pred_len,
        }
    }
}

/// Cuts a daily segment into stride-1 windows over one channel.
pub fn make_windows(
    segment: &PriceSeries,
    seq_len: usize,
    pred_len: usize,
    channel: FieldRole,
) -> Result<WindowSet> {
    WindowSet::from_values(
        &segment.values(channel),
        seq_len,
        pred_len,
        segment.first_date(),
    )
}

/// Keeps the first `ceil(fraction * |train|)` timesteps of a training segment.
pub fn few_shot_truncate(
    train: &PriceSeries,
    fraction: f64,
    window_len: usize,
) -> Result<PriceSeries> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "few-shot fraction {fraction} is not in (0, 1]"
        )));
    }
    let keep = ((fraction * train.len() as f64 - COUNT_SLACK).ceil() as usize).max(1);
    let keep = keep.min(train.len());
    if keep < window_len {
        return Err(Error::InsufficientData {
            required: window_len,
            actual: keep,
        });
    }
    train.slice(0..keep)
}
