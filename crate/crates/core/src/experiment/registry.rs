//! Append-only JSON-lines run registry.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::train::Protocol;

/// Overrides the registry directory (default `./runs`).
pub const REGISTRY_ENV: &str = "ETHFPT_REGISTRY_DIR";
pub const REGISTRY_FILE: &str = "registry.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    /// `<content hash>-<ordinal>`; the hash covers config, seed and dataset
    /// digest, the ordinal counts earlier runs with the same hash.
    pub id: String,
    pub timestamp: String,
    pub protocol: Protocol,
    pub model_kind: String,
    pub model_label: String,
    pub dataset: String,
    pub dataset_digest: String,
    pub config_hash: String,
    pub seed: u64,
    pub metrics: Option<MetricReport>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub config: serde_json::Value,
}

/// First 16 hex digits of SHA-256 over `config_hash:seed:dataset_digest`.
pub fn content_hash(config_hash: &str, seed: u64, dataset_digest: &str) -> String {
    let text = format!("{config_hash}:{seed}:{dataset_digest}");
    hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
}

impl ExperimentRecord {
    pub fn content_hash(&self) -> String {
        content_hash(&self.config_hash, self.seed, &self.dataset_digest)
    }

    /// The id without its run ordinal.
    pub fn id_prefix(&self) -> &str {
        self.id.rsplit_once('-').map_or(&self.id, |(p, _)| p)
    }

    #[cfg(test)]
    pub(crate) fn for_test(model: &str, dataset: &str, protocol: Protocol, mse: f64) -> Self {
        Self {
            id: format!("{}-0", content_hash(model, 0, dataset)),
            timestamp: "2024-01-01T00:00:00Z".into(),
            protocol,
            model_kind: model.to_lowercase(),
            model_label: model.into(),
            dataset: dataset.into(),
            dataset_digest: dataset.into(),
            config_hash: model.into(),
            seed: 0,
            metrics: Some(MetricReport {
                mse,
                mae: mse.sqrt() * 0.8,
                rmse: mse.sqrt(),
                n: 10,
                scale_label: crate::eval::STANDARDIZED_SCALE.into(),
            }),
            checkpoint: None,
            predictions: None,
            epochs_run: 1,
            best_epoch: Some(0),
            config: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Registry {
    path: PathBuf,
}

impl Registry {
    pub fn at(dir: impl AsRef<Path>) -> Self {
        Self {
            path: dir.as_ref().join(REGISTRY_FILE),
        }
    }

    /// `$ETHFPT_REGISTRY_DIR`, or `runs/` under the working directory.
    pub fn from_env() -> Self {
        let dir = std::env::var_os(REGISTRY_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        Self::at(dir)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn parse(text: &str) -> Result<Vec<ExperimentRecord>> {
        if text.is_empty() {
            return Ok(Vec::new());
        }
        let lines: Vec<&str> = text.split_terminator('\n').collect();
        let mut out = Vec::with_capacity(lines.len());
        for (index, line) in lines.iter().enumerate() {
            let rec: ExperimentRecord =
                serde_json::from_str(line).map_err(|e| Error::Integrity {
                    index,
                    message: e.to_string(),
                })?;
            out.push(rec);
        }
        if !text.ends_with('\n') {
            return Err(Error::Integrity {
                index: lines.len() - 1,
                message: "last record is not newline-terminated (truncated write?)".into(),
            });
        }
        Ok(out)
    }

    /// All records in insertion order. A missing file is an empty registry.
    pub fn read(&self) -> Result<Vec<ExperimentRecord>> {
        match fs::read_to_string(&self.path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(Error::io(&self.path, e)),
        }
    }

    /// Next free ordinal for runs sharing `hash`.
    pub fn next_ordinal(&self, hash: &str) -> Result<usize> {
        Ok(self
            .read()?
            .iter()
            .filter(|r| r.id_prefix() == hash)
            .count())
    }

    /// Appends under an exclusive advisory lock. The whole file is rewritten
    /// to a temporary sibling and renamed over the original, so readers see
    /// either the old or the new registry.
    pub fn append(&self, record: &ExperimentRecord) -> Result<usize> {
        let dir = self.path.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lock_path = self.path.with_extension("lock");
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| Error::io(&lock_path, e))?;
        lock.lock().map_err(|e| Error::io(&lock_path, e))?;

        let existing = match fs::read(&self.path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        let text = String::from_utf8(existing).map_err(|e| Error::Integrity {
            index: 0,
            message: e.to_string(),
        })?;
        let count = Self::parse(&text)?.len();

        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let tmp = self.path.with_extension("jsonl.tmp");
        {
            let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(text.as_bytes())
                .and_then(|_| f.write_all(line.as_bytes()))
                .and_then(|_| f.sync_all())
                .map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, &self.path).map_err(|e| Error::io(&self.path, e))?;
        lock.unlock().map_err(|e| Error::io(&lock_path, e))?;
        Ok(count + 1)
    }
}
