//! Pipeline drivers behind the command-line subcommands.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::backbone::{
    apply_freeze_policy, build_backbone, convert_gpt2_checkpoint, load_pretrained_weights,
    reconcile_with_archive, LoadReport,
};
use crate::baselines::build_baseline;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_model, make_comparison_table, ComparisonTable, MetricReport, PredictionTable,
};
use crate::experiment::config::{DataSection, ModelSpec, ResolvedConfig};
use crate::experiment::registry::{content_hash, ExperimentRecord, Registry};
use crate::ingest::{
    chronological_split, few_shot_truncate, make_windows, parse_price_csv, regularize_daily,
    write_price_csv, PriceSeries, Split, WindowSet,
};
use crate::model::Forecaster;
use crate::normpatch::{fit_standardizer, StandardizationStats};
use crate::params::{Snapshot, WeightArchive};
use crate::train::{fit, Protocol, TrainHistory};

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const HISTORY_FILE: &str = "history.json";
pub const RESOLVED_FILE: &str = "resolved_config.json";

/// Reads and regularizes the configured CSV.
pub fn load_series(data: &DataSection) -> Result<PriceSeries> {
    let path = data
        .csv
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset: set data.csv or pass --dataset".into()))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let raw = parse_price_csv(BufReader::new(file), &data.schema.columns())?;
    let series = regularize_daily(&raw, data.gap_policy)?;
    let filled = series.records().iter().filter(|r| r.filled).count();
    if filled > 0 {
        warn!("{filled} missing days were forward-filled");
    }
    Ok(series)
}

/// Standardized windows for every segment, ready for training.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub split: Split,
    pub stats: StandardizationStats,
    /// Training timesteps actually used (all of them, or the few-shot prefix).
    pub train_timesteps: usize,
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    pub digest: String,
}

/// Splits, fits the standardizer on the full training segment and windows
/// each segment. Under the few-shot protocol only the leading fraction of
/// the training segment is windowed; validation and test are untouched.
pub fn prepare_data(
    series: &PriceSeries,
    data: &DataSection,
    protocol: Protocol,
    few_shot_fraction: f64,
) -> Result<PreparedData> {
    let window = data.seq_len + data.pred_len;
    let split = chronological_split(series, &data.split_spec()?, window)?;
    for w in &split.warnings {
        warn!("{w}");
    }
    let stats = fit_standardizer(&split.train.values(data.target))?;
    let train_segment = match protocol {
        Protocol::ShortTerm => split.train.clone(),
        Protocol::FewShot => few_shot_truncate(&split.train, few_shot_fraction, window)?,
    };
    let z = |w: WindowSet| w.map_values(|v| stats.forward(v));
    let train = z(make_windows(
        &train_segment,
        data.seq_len,
        data.pred_len,
        data.target,
    )?);
    let val = if split.val.len() >= window {
        z(make_windows(
            &split.val,
            data.seq_len,
            data.pred_len,
            data.target,
        )?)
    } else {
        WindowSet::empty(data.seq_len, data.pred_len)
    };
    let test = z(make_windows(
        &split.test,
        data.seq_len,
        data.pred_len,
        data.target,
    )?);
    Ok(PreparedData {
        train_timesteps: train_segment.len(),
        digest: series.digest(),
        split,
        stats,
        train,
        val,
        test,
    })
}

fn is_public_gpt2_layout(archive: &WeightArchive) -> bool {
    archive
        .tensors
        .keys()
        .any(|k| k.starts_with("transformer.") || k.starts_with("h.") || k == "wpe.weight")
}

/// Builds the configured model with the freeze policy applied and, for
/// backbones with `weights`, the pretrained arrays loaded.
pub fn build_model(resolved: &ResolvedConfig) -> Result<(Box<dyn Forecaster>, Option<LoadReport>)> {
    let seed = resolved.seed();
    match &resolved.model {
        ModelSpec::Baseline(b) => {
            let mut b = b.clone();
            b.seed = seed;
            Ok((Box::new(build_baseline(&b)?), None))
        }
        ModelSpec::Backbone {
            config,
            freeze,
            weights,
        } => {
            let (config, archive) = match weights {
                Some(path) => {
                    let mut archive = WeightArchive::load(path)?;
                    if is_public_gpt2_layout(&archive) {
                        archive = convert_gpt2_checkpoint(&archive)?;
                    }
                    (reconcile_with_archive(config, &archive), Some(archive))
                }
                None => (config.clone(), None),
            };
            let mut model = build_backbone(&config, seed)?.with_label(&resolved.label);
            let report = match &archive {
                Some(a) => {
                    let r = load_pretrained_weights(&mut model, a)?;
                    info!(
                        "loaded {} arrays ({} missing, {} unused)",
                        r.loaded.len(),
                        r.missing.len(),
                        r.unused.len()
                    );
                    Some(r)
                }
                None => None,
            };
            apply_freeze_policy(&mut model, *freeze);
            Ok((Box::new(model), report))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config_hash: String,
    pub run_id: String,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: ExperimentRecord,
    pub history: TrainHistory,
    pub metrics: MetricReport,
    pub predictions: PredictionTable,
    pub out_dir: PathBuf,
    pub load_report: Option<LoadReport>,
    pub final_params: Snapshot,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Trains, evaluates on the test split, writes artifacts into `out_dir`
/// (default: a directory named after the run id next to the registry) and
/// appends a record to `registry`.
pub fn run_training(
    resolved: &ResolvedConfig,
    out_dir: Option<&Path>,
    registry: &Registry,
) -> Result<RunOutcome> {
    let series = load_series(&resolved.data)?;
    let t = &resolved.train;
    let data = prepare_data(&series, &resolved.data, t.protocol, t.few_shot_fraction)?;
    info!(
        "{} {}: {} train / {} val / {} test windows",
        resolved.label,
        t.protocol,
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    let (mut model, load_report) = build_model(resolved)?;
    let history = fit(model.as_mut(), &data.train, &data.val, t)?;
    let (metrics, predictions) = evaluate_model(model.as_ref(), &data.test, &data.stats)?;

    let config_hash = resolved.hash();
    let hash = content_hash(&config_hash, t.seed, &data.digest);
    let id = format!("{hash}-{}", registry.next_ordinal(&hash)?);
    let out_dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => registry.path().parent().unwrap_or(Path::new(".")).join(&id),
    };
    create_dir(&out_dir)?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    model.params().to_archive().save(&checkpoint)?;
    write_json(
        &out_dir.join(MANIFEST_FILE),
        &CheckpointManifest {
            config_hash: config_hash.clone(),
            run_id: id.clone(),
            best_epoch: history.best_epoch,
            best_val_loss: history.best_val_loss,
            epochs_run: history.epochs_run,
        },
    )?;
    let pred_path = out_dir.join(PREDICTIONS_FILE);
    let f = File::create(&pred_path).map_err(|e| Error::io(&pred_path, e))?;
    predictions.write_csv(f)?;
    write_json(&out_dir.join(METRICS_FILE), &metrics)?;
    write_json(&out_dir.join(HISTORY_FILE), &history)?;
    write_json(&out_dir.join(RESOLVED_FILE), resolved)?;

    let record = ExperimentRecord {
        id,
        timestamp: chrono::Utc::now().to_rfc3339(),
        protocol: t.protocol,
        model_kind: resolved.kind.to_string(),
        model_label: resolved.label.clone(),
        dataset: resolved.data.name.clone(),
        dataset_digest: data.digest.clone(),
        config_hash,
        seed: t.seed,
        metrics: Some(metrics.clone()),
        checkpoint: Some(checkpoint),
        predictions: Some(pred_path),
        epochs_run: history.epochs_run,
        best_epoch: history.best_epoch,
        config: serde_json::to_value(resolved)?,
    };
    registry.append(&record)?;
    info!(
        "run {}: test mse {:.5} mae {:.5} rmse {:.5}",
        record.id, metrics.mse, metrics.mae, metrics.rmse
    );
    Ok(RunOutcome {
        record,
        history,
        metrics,
        predictions,
        out_dir,
        load_report,
        final_params: model.params().snapshot(true),
    })
}

/// Re-evaluates a saved checkpoint on the configured test split and writes
/// metrics and predictions into `out_dir`.
pub fn run_evaluation(
    resolved: &ResolvedConfig,
    checkpoint: &Path,
    out_dir: &Path,
) -> Result<(MetricReport, PredictionTable)> {
    let series = load_series(&resolved.data)?;
    let t = &resolved.train;
    let data = prepare_data(&series, &resolved.data, t.protocol, t.few_shot_fraction)?;
    let archive = WeightArchive::load(checkpoint)?;
    let mut model: Box<dyn Forecaster> = match &resolved.model {
        ModelSpec::Backbone { config, freeze, .. } => {
            let config = reconcile_with_archive(config, &archive);
            let mut m = build_backbone(&config, t.seed)?.with_label(&resolved.label);
            apply_freeze_policy(&mut m, *freeze);
            Box::new(m)
        }
        ModelSpec::Baseline(_) => build_model(resolved)?.0,
    };
    let snapshot: Snapshot = archive.tensors.into_iter().collect();
    model.params_mut().restore(&snapshot)?;
    let (metrics, predictions) = evaluate_model(model.as_ref(), &data.test, &data.stats)?;
    create_dir(out_dir)?;
    write_json(&out_dir.join(METRICS_FILE), &metrics)?;
    let pred_path = out_dir.join(PREDICTIONS_FILE);
    predictions.write_csv(File::create(&pred_path).map_err(|e| Error::io(&pred_path, e))?)?;
    Ok((metrics, predictions))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub dataset: String,
    pub digest: String,
    pub records: usize,
    pub filled_days: usize,
    pub segments: Vec<SegmentInfo>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub name: String,
    pub len: usize,
    pub first: NaiveDate,
    pub last: NaiveDate,
}

/// Writes the regularized series as canonical CSV plus a split manifest.
pub fn run_prepare(data: &DataSection, out_dir: &Path) -> Result<SplitManifest> {
    let series = load_series(data)?;
    let split = chronological_split(&series, &data.split_spec()?, data.seq_len + data.pred_len)?;
    create_dir(out_dir)?;
    let csv_path = out_dir.join("prepared.csv");
    write_price_csv(
        &series,
        File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?,
    )?;
    let seg = |name: &str, s: &PriceSeries| SegmentInfo {
        name: name.into(),
        len: s.len(),
        first: s.first_date(),
        last: s.last_date(),
    };
    let manifest = SplitManifest {
        dataset: data.name.clone(),
        digest: series.digest(),
        records: series.len(),
        filled_days: series.records().iter().filter(|r| r.filled).count(),
        segments: vec![
            seg("train", &split.train),
            seg("val", &split.val),
            seg("test", &split.test),
        ],
        warnings: split.warnings.clone(),
    };
    write_json(&out_dir.join("split.json"), &manifest)?;
    Ok(manifest)
}

/// Comparison table over the registry's completed runs of one protocol.
pub fn run_compare(registry: &Registry, protocol: Protocol) -> Result<ComparisonTable> {
    let records: Vec<ExperimentRecord> = registry
        .read()?
        .into_iter()
        .filter(|r| r.protocol == protocol && r.metrics.is_some())
        .collect();
    make_comparison_table(&records)
}

/// Writes `dataset_series.csv` (the regularized series with its split label)
/// and `test_predictions.csv` (actual vs predicted dollars for every
/// registered run whose prediction file still exists).
pub fn run_export_plot_data(
    data: &DataSection,
    registry: &Registry,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    create_dir(out_dir)?;
    let series = load_series(data)?;
    let split = chronological_split(&series, &data.split_spec()?, 0)?;
    let series_path = out_dir.join("dataset_series.csv");
    {
        let mut w = csv::Writer::from_path(&series_path)?;
        w.write_record(["date", "open", "high", "low", "close", "volume", "segment"])?;
        for (name, seg) in [
            ("train", &split.train),
            ("val", &split.val),
            ("test", &split.test),
        ] {
            for r in seg.records() {
                w.write_record([
                    r.date.to_string(),
                    r.open.to_string(),
                    r.high.to_string(),
                    r.low.to_string(),
                    r.close.to_string(),
                    r.volume.to_string(),
                    name.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&series_path, e))?;
    }
    let preds_path = out_dir.join("test_predictions.csv");
    let mut w = csv::Writer::from_path(&preds_path)?;
    w.write_record([
        "run_id",
        "model",
        "dataset",
        "protocol",
        "date",
        "actual_usd",
        "pred_usd",
    ])?;
    for rec in registry.read()? {
        let Some(path) = &rec.predictions else {
            continue;
        };
        let Ok(file) = File::open(path) else {
            warn!(
                "prediction file {} for run {} is gone",
                path.display(),
                rec.id
            );
            continue;
        };
        for row in PredictionTable::read_csv(file)?.rows {
            w.write_record([
                rec.id.clone(),
                rec.model_label.clone(),
                rec.dataset.clone(),
                rec.protocol.to_string(),
                row.date.to_string(),
                row.actual_usd.to_string(),
                row.pred_usd.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&preds_path, e))?;
    Ok((series_path, preds_path))
}
