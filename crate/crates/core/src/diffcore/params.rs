use std::collections::HashMap;
use std::ops::Index;

use super::tensor::{numel_of, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub path: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Named parameter values, in registration order.
///
/// The store owns plain numbers; [`ParamStore::bind`] turns them into
/// graph leaves for one forward/backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_path: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Result<ParamId> {
        let path = path.into();
        if path.is_empty() || path.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("parameter path {path:?} must be non-empty without whitespace")));
        }
        if numel_of(shape) != values.len() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "param",
                lhs: shape.to_vec(),
                rhs: vec![values.len()],
            });
        }
        if self.by_path.contains_key(&path) {
            return Err(Error::invalid(format!("duplicate parameter path {path}")));
        }
        let id = self.entries.len();
        self.by_path.insert(path.clone(), id);
        self.entries.push(ParamEntry {
            path,
            shape: shape.to_vec(),
            values,
        });
        Ok(ParamId(id))
    }

    pub fn id(&self, path: &str) -> Option<ParamId> {
        self.by_path.get(path).copied().map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].values
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// Fresh gradient-tracking leaves for every parameter.
    pub fn bind(&self) -> Bound {
        Bound {
            tensors: self
                .entries
                .iter()
                .map(|e| Tensor::param(e.values.clone(), &e.shape).expect("validated on insert"))
                .collect(),
        }
    }

    /// Leaves without gradient tracking; forward passes record no graph.
    pub fn bind_frozen(&self) -> Bound {
        Bound {
            tensors: self
                .entries
                .iter()
                .map(|e| Tensor::new(e.values.clone(), &e.shape).expect("validated on insert"))
                .collect(),
        }
    }

    /// True when both stores have the same paths and shapes in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.path == b.path && a.shape == b.shape)
    }
}

/// Graph leaves for one pass, indexed by [`ParamId`].
pub struct Bound {
    tensors: Vec<Tensor>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    /// Accumulated gradient per parameter, zeros where none reached it.
    pub fn grads(&self) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect()
    }

    pub fn zero_grads(&self) {
        self.tensors.iter().for_each(Tensor::zero_grad);
    }
}

impl Index<ParamId> for Bound {
    type Output = Tensor;

    fn index(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }
}
