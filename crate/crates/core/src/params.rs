//! Named parameter arrays with a trainable/frozen flag, and the on-disk
//! weight archive.
//!
//! Every parameter is a 2-D `f64` array; vectors are stored as `1 × n`.
//! Archives use the safetensors container: a little-endian `u64` header
//! length, a JSON header mapping each name to `{dtype, shape, data_offsets}`,
//! then the raw tensor bytes. Writes use `F64`; reads accept `F64` and `F32`
//! and treat 1-D tensors of length `n` as `1 × n`.

use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexMap;
use ndarray::Array2;
use safetensors::{Dtype, SafeTensors};

use crate::error::{Error, Result};

const ORDER_KEY: &str = "ethfpt.order";

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub trainable: bool,
}

/// Values of a subset of parameters, keyed by name.
pub type Snapshot = BTreeMap<String, Array2<f64>>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: IndexMap<String, Param>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>, trainable: bool) {
        self.entries.insert(name.into(), Param { value, trainable });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Array2<f64>> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array2<f64>> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|p| p.trainable)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|p| p.trainable = trainable)
            .ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in self.entries.values_mut() {
            p.trainable = trainable;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| n)
            .collect()
    }

    pub fn frozen_names(&self) -> Vec<&str> {
        self.iter()
            .filter(|(_, p)| !p.trainable)
            .map(|(n, _)| n)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn num_trainable_elements(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn snapshot(&self, trainable_only: bool) -> Snapshot {
        self.iter()
            .filter(|(_, p)| !trainable_only || p.trainable)
            .map(|(n, p)| (n.to_string(), p.value.clone()))
            .collect()
    }

    /// Writes every snapshot entry back; names and shapes must exist.
    pub fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        for (name, value) in snapshot {
            let slot = self.get_mut(name)?;
            if slot.dim() != value.dim() {
                return Err(Error::WeightShape {
                    name: name.clone(),
                    model: vec![slot.nrows(), slot.ncols()],
                    archive: vec![value.nrows(), value.ncols()],
                });
            }
            slot.assign(value);
        }
        Ok(())
    }

    pub fn to_archive(&self) -> WeightArchive {
        WeightArchive {
            tensors: self
                .iter()
                .map(|(n, p)| (n.to_string(), p.value.clone()))
                .collect(),
        }
    }
}

/// Ordered name → array mapping as stored on disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightArchive {
    pub tensors: IndexMap<String, Array2<f64>>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.get(name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let raw: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(name, a)| {
                let bytes = a.iter().flat_map(|v| v.to_le_bytes()).collect();
                (name.clone(), vec![a.nrows(), a.ncols()], bytes)
            })
            .collect();
        let views = raw
            .iter()
            .map(|(name, shape, bytes)| {
                safetensors::tensor::TensorView::new(Dtype::F64, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::Archive(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let order = serde_json::to_string(&self.tensors.keys().collect::<Vec<_>>())?;
        let meta = Some(std::collections::HashMap::from([(
            ORDER_KEY.to_string(),
            order,
        )]));
        safetensors::serialize(views, &meta).map_err(|e| Error::Archive(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Archive(e.to_string()))?;
        let (_, header) =
            SafeTensors::read_metadata(bytes).map_err(|e| Error::Archive(e.to_string()))?;
        let order: Option<Vec<String>> = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get(ORDER_KEY))
            .and_then(|s| serde_json::from_str(s).ok());
        let mut named: Vec<_> = st.tensors();
        // Without a recorded order (foreign files), fall back to data layout.
        named.sort_by_key(|(name, v)| {
            let rank = order
                .as_ref()
                .and_then(|o| o.iter().position(|n| n == name))
                .unwrap_or(usize::MAX);
            (rank, v.data().as_ptr() as usize)
        });
        let mut tensors = IndexMap::new();
        for (name, view) in named {
            let (rows, cols) = match view.shape() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                other => {
                    return Err(Error::Archive(format!(
                        "`{name}` has unsupported rank {} (shape {other:?})",
                        other.len()
                    )))
                }
            };
            let data = view.data();
            let values: Vec<f64> = match view.dtype() {
                Dtype::F64 => data
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect(),
                Dtype::F32 => data
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
                    .collect(),
                other => {
                    return Err(Error::Archive(format!(
                        "`{name}` has unsupported dtype {other:?}"
                    )))
                }
            };
            let arr = Array2::from_shape_vec((rows, cols), values)
                .map_err(|e| Error::Archive(format!("`{name}`: {e}")))?;
            tensors.insert(name, arr);
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
