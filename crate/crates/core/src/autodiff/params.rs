//! Named parameter storage shared by models, the optimizer, and checkpoints.

use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{Tape, TensorId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub trainable: bool,
}

impl ParamEntry {
    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }
}

/// Ordered collection of named parameters. Order is creation order and is
/// part of the checkpoint contract.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        trainable: bool,
    ) -> Result<usize> {
        let name = name.into();
        if data.len() != rows * cols {
            return Err(Error::InvalidArg(format!(
                "parameter {name}: {} values cannot fill {rows}x{cols}",
                data.len()
            )));
        }
        if self.index_of(&name).is_some() {
            return Err(Error::InvalidArg(format!("duplicate parameter name {name}")));
        }
        self.entries.push(ParamEntry {
            name,
            rows,
            cols,
            data,
            trainable,
        });
        Ok(self.entries.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.iter_mut().find(|e| e.name == name)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of stored scalars, trainable or not.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(ParamEntry::numel).sum()
    }

    /// Number of scalars the optimizer may move.
    pub fn trainable_numel(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(ParamEntry::numel).sum()
    }

    /// Register every parameter on a tape. With `with_grad`, trainable
    /// entries become gradient-carrying nodes; frozen entries are always
    /// plain leaves, so backward never walks their subtrees.
    pub fn bind(&self, tape: &mut Tape, with_grad: bool) -> BoundParams {
        let ids = self
            .entries
            .iter()
            .map(|e| {
                if with_grad && e.trainable {
                    tape.param(e.data.clone(), e.rows, e.cols).expect("stored shape is valid")
                } else {
                    tape.leaf(e.data.clone(), e.rows, e.cols).expect("stored shape is valid")
                }
            })
            .collect();
        BoundParams { ids }
    }
}

/// Tape handles for one binding of a [`ParamStore`], index-aligned with it.
pub struct BoundParams {
    ids: Vec<TensorId>,
}

impl BoundParams {
    pub fn id(&self, index: usize) -> TensorId {
        self.ids[index]
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_names() {
        let mut s = ParamStore::new();
        s.add("w", 1, 2, vec![0.0; 2], true).unwrap();
        assert!(s.add("w", 1, 2, vec![0.0; 2], true).is_err());
    }

    #[test]
    fn rejects_bad_lengths() {
        let mut s = ParamStore::new();
        assert!(s.add("w", 2, 2, vec![0.0; 3], true).is_err());
    }

    #[test]
    fn numel_sums_all_entries() {
        let mut s = ParamStore::new();
        s.add("a", 2, 3, vec![0.0; 6], true).unwrap();
        s.add("b", 1, 4, vec![0.0; 4], false).unwrap();
        assert_eq!(s.numel(), 10);
    }
}
