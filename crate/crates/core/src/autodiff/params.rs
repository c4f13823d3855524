use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AutodiffError, Tensor};
use crate::scalar::Scalar;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
    frozen: bool,
}

/// Named trainable tensors with gradient buffers of matching shape.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, ParamId>,
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub(crate) grads: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads.iter().map(|(p, g)| (*p, g))
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId, AutodiffError> {
        if self.by_name.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.entries.len());
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad,
            frozen: false,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    /// Frozen parameters are treated as constants by the tape.
    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.iter() {
            self.entries[id.0].grad.add_assign(g);
        }
    }

    /// Returns `(value, grad)` for in-place optimizer updates.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor<T>, &Tensor<T>) {
        let e = &mut self.entries[id.0];
        (&mut e.value, &e.grad)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params: self
                .entries
                .iter()
                .map(|e| CheckpointEntry {
                    name: e.name.clone(),
                    shape: e.value.shape().to_vec(),
                    data: e.value.data().iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, AutodiffError> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let mut store = ParamStore::new();
        for e in &ckpt.params {
            store.insert(&e.name, Tensor::from_f64(&e.shape, &e.data)?)?;
        }
        Ok(store)
    }

    /// Overwrites values of parameters present in both stores; shapes must agree.
    pub fn load_values_from(&mut self, other: &ParamStore<T>) -> Result<(), AutodiffError> {
        for e in &other.entries {
            let id = self
                .id(&e.name)
                .ok_or_else(|| AutodiffError::Checkpoint(format!("unknown parameter {}", e.name)))?;
            let dst = &mut self.entries[id.0].value;
            if dst.shape() != e.value.shape() {
                return Err(AutodiffError::Checkpoint(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    e.name,
                    dst.shape(),
                    e.value.shape()
                )));
            }
            *dst = e.value.clone();
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        let file = fs::File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), &self.to_checkpoint())
            .map_err(|e| AutodiffError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        let file = fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&ckpt)
    }
}

pub const CHECKPOINT_FORMAT: &str = "gts-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk parameter map. Values are stored as `f64`, which is exact for
/// both supported precisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: Vec<CheckpointEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}
