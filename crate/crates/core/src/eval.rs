//! Error metrics, test-set evaluation, prediction export and comparison
//! tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ExperimentRecord;
use crate::ingest::WindowSet;
use crate::model::Forecaster;
use crate::normpatch::StandardizationStats;
use crate::train::Protocol;

pub const STANDARDIZED_SCALE: &str = "standardized (train-fit z-score)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
    pub scale_label: String,
}

/// MAE, MSE and RMSE of `predicted` against `actual`.
pub fn compute_metrics(actual: &[f64], predicted: &[f64]) -> Result<MetricReport> {
    if actual.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} actual values vs {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::EmptyInput("no values to score".into()));
    }
    let n = actual.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (y, p) in actual.iter().zip(predicted) {
        let d = y - p;
        se += d * d;
        ae += d.abs();
    }
    let mse = se / n;
    Ok(MetricReport {
        mse,
        mae: ae / n,
        rmse: mse.sqrt(),
        n: actual.len(),
        scale_label: STANDARDIZED_SCALE.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub date: NaiveDate,
    pub actual_std: f64,
    pub pred_std: f64,
    pub actual_usd: f64,
    pub pred_usd: f64,
}

/// One row per test window, first forecast step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionTable {
    pub rows: Vec<PredictionRow>,
}

impl PredictionTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<prediction csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(Self { rows })
    }
}

/// Metrics over every forecast step of every test window, on the
/// standardized scale.
pub fn evaluate_model<M: Forecaster + ?Sized>(
    model: &M,
    test: &WindowSet,
    stats: &StandardizationStats,
) -> Result<(MetricReport, PredictionTable)> {
    if test.is_empty() {
        return Err(Error::InsufficientData {
            required: 1,
            actual: 0,
        });
    }
    if test.pred_len != model.pred_len() || test.seq_len != model.seq_len() {
        return Err(Error::Shape(format!(
            "test windows are {}→{}, model is {}→{}",
            test.seq_len,
            test.pred_len,
            model.seq_len(),
            model.pred_len()
        )));
    }
    let mut predicted = Vec::with_capacity(test.len() * test.pred_len);
    for start in (0..test.len()).step_by(256) {
        let rows: Vec<usize> = (start..(start + 256).min(test.len())).collect();
        let part = test.select(&rows);
        predicted.extend(model.predict(&part.inputs)?.iter().copied());
    }
    let actual: Vec<f64> = test.targets.iter().copied().collect();
    let report = compute_metrics(&actual, &predicted)?;
    let rows = (0..test.len())
        .map(|i| {
            let a = actual[i * test.pred_len];
            let p = predicted[i * test.pred_len];
            PredictionRow {
                date: test.target_dates[i],
                actual_std: a,
                pred_std: p,
                actual_usd: stats.inverse(a),
                pred_usd: stats.inverse(p),
            }
        })
        .collect();
    Ok((report, PredictionTable { rows }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub dataset: String,
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    /// Number of runs averaged into this row.
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub protocol: Protocol,
    pub scale_label: String,
    /// Sorted by ascending MSE.
    pub rows: Vec<ComparisonRow>,
    /// Row index holding the minimum MSE, MAE and RMSE.
    pub best: [usize; 3],
}

impl ComparisonTable {
    pub fn render(&self) -> String {
        let title = match self.protocol {
            Protocol::ShortTerm => "Short-Term Forecasting",
            Protocol::FewShot => "Few-Shot Forecasting",
        };
        let cells: Vec<[String; 3]> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mark = |k: usize| if self.best[k] == i { "*" } else { " " };
                [
                    format!("{:.4}{}", r.mse, mark(0)),
                    format!("{:.4}{}", r.mae, mark(1)),
                    format!("{:.4}{}", r.rmse, mark(2)),
                ]
            })
            .collect();
        let model_w = self
            .rows
            .iter()
            .map(|r| r.model.len())
            .max()
            .unwrap_or(0)
            .max(5);
        let num_w = cells
            .iter()
            .flatten()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{title} (metrics on {} scale; * = column minimum)",
            self.scale_label
        );
        let _ = writeln!(
            s,
            "{:<model_w$}  {:>num_w$}  {:>num_w$}  {:>num_w$}  Dataset",
            "Model", "MSE ", "MAE ", "RMSE "
        );
        for (r, c) in self.rows.iter().zip(&cells) {
            let _ = writeln!(
                s,
                "{:<model_w$}  {:>num_w$}  {:>num_w$}  {:>num_w$}  {}",
                r.model, c[0], c[1], c[2], r.dataset
            );
        }
        s
    }
}

/// Groups completed runs by (model, dataset), averages over seeds and ranks
/// by MSE. All records must share a protocol.
pub fn make_comparison_table(records: &[ExperimentRecord]) -> Result<ComparisonTable> {
    let first = records
        .first()
        .ok_or_else(|| Error::EmptyInput("no runs to compare".into()))?;
    let protocol = first.protocol;
    if let Some(other) = records.iter().find(|r| r.protocol != protocol) {
        return Err(Error::Usage(format!(
            "cannot compare {protocol} and {} runs in one table",
            other.protocol
        )));
    }
    let mut groups: BTreeMap<(String, String), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        if r.metrics.is_some() {
            groups
                .entry((r.model_label.clone(), r.dataset.clone()))
                .or_default()
                .push(r);
        }
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput("no run has metrics".into()));
    }
    let mut rows: Vec<ComparisonRow> = groups
        .into_iter()
        .map(|((model, dataset), runs)| {
            let n = runs.len() as f64;
            let mean = |f: fn(&MetricReport) -> f64| {
                runs.iter()
                    .map(|r| f(r.metrics.as_ref().expect("filtered")))
                    .sum::<f64>()
                    / n
            };
            ComparisonRow {
                model,
                dataset,
                mse: mean(|m| m.mse),
                mae: mean(|m| m.mae),
                rmse: mean(|m| m.rmse),
                runs: runs.len(),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.mse.total_cmp(&b.mse));
    let argmin = |f: fn(&ComparisonRow) -> f64| {
        (0..rows.len())
            .min_by(|&a, &b| f(&rows[a]).total_cmp(&f(&rows[b])))
            .expect("non-empty")
    };
    let best = [argmin(|r| r.mse), argmin(|r| r.mae), argmin(|r| r.rmse)];
    Ok(ComparisonTable {
        protocol,
        scale_label: STANDARDIZED_SCALE.to_string(),
        rows,
        best,
    })
}
