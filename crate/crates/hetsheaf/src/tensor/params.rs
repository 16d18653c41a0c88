//! Named, insertion-ordered parameter storage.
//!
//! A [`ParamStore`] owns the trainable state of a model outside any tape.
//! Each forward pass loads the entries as leaf tensors; the optimizer and
//! checkpoints operate on the store directly. Entry order is the canonical
//! order for gradients, optimizer moments, and serialization.

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Tid};

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    /// Registers a parameter; names must be unique. Returns its handle
    /// (stable index into the store).
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Result<usize> {
        let name = name.into();
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "param {name}: {} values for shape {rows}x{cols}",
                data.len()
            )));
        }
        if self.entries.iter().any(|p| p.name == name) {
            return Err(Error::validation(format!("duplicate parameter name {name}")));
        }
        self.entries.push(Param { name, rows, cols, data });
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    pub fn entries(&self) -> &[Param] {
        &self.entries
    }

    pub fn entry(&self, handle: usize) -> &Param {
        &self.entries[handle]
    }

    pub fn entry_mut(&mut self, handle: usize) -> &mut Param {
        &mut self.entries[handle]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.iter_mut().find(|p| p.name == name)
    }

    /// Loads every entry onto the tape as a grad-tracked leaf. The returned
    /// vector is index-aligned with the store.
    pub fn load(&self, tape: &mut Tape) -> Result<Vec<Tid>> {
        self.entries
            .iter()
            .map(|p| tape.leaf(p.rows, p.cols, p.data.clone(), true))
            .collect()
    }

    /// Reads gradients for previously loaded leaves after a backward pass.
    /// Entries the loss never touched get zero gradients.
    pub fn collect_grads(&self, tape: &Tape, leaves: &[Tid]) -> Vec<Vec<f64>> {
        self.entries
            .iter()
            .zip(leaves)
            .map(|(p, &t)| match tape.grad(t) {
                Some(g) => g.to_vec(),
                None => vec![0.0; p.data.len()],
            })
            .collect()
    }
}
