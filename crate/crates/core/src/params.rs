//! Named parameter storage.
//!
//! Models are structures of `ParamId` handles into a `ParamStore`; the store
//! owns the tensors in construction order, which fixes checkpoint layout,
//! optimizer-state alignment and gradient-reduction order. Binding a store to
//! a tape snapshots every parameter (copies) and yields tape handles aligned
//! with the ids.

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

pub struct ParamEntry<T: Real> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Eligible for decoupled weight decay (projection weights only).
    pub decay: bool,
}

pub struct ParamStore<T: Real> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor<T>, decay: bool) -> ParamId {
        tensor.set_requires_grad(true);
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry { name: name.into(), tensor, decay });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    /// Total element count, optionally restricted to rank-2 projection weights
    /// (the weight-only accounting convention).
    pub fn param_count(&self, weights_only: bool) -> u64 {
        self.entries
            .iter()
            .filter(|e| !weights_only || e.tensor.rank() == 2)
            .map(|e| e.tensor.len() as u64)
            .sum()
    }

    /// Snapshot every parameter onto a tape.
    pub fn bind(&self, tape: &mut Tape<T>) -> Binding {
        Binding {
            vars: self.entries.iter().map(|e| tape.leaf(&e.tensor)).collect(),
        }
    }

    /// Collect gradients for every parameter in store order (zeros where no
    /// gradient flowed). Errors on non-finite gradients.
    pub fn gradients(&self, tape: &Tape<T>, binding: &Binding) -> Result<Vec<Tensor<T>>> {
        let mut out = Vec::with_capacity(self.entries.len());
        for (e, &v) in self.entries.iter().zip(&binding.vars) {
            let g = match tape.grad(v) {
                Some(g) => g.clone(),
                None => Tensor::zeros(e.tensor.dims()),
            };
            if !g.is_all_finite() {
                return Err(Error::NonFinite { op: "gradient" });
            }
            out.push(g);
        }
        Ok(out)
    }
}

/// Tape handles for one bound snapshot of a store.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Wrap already-registered tape handles (ordered like a store).
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Binding { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
