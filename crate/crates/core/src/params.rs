//! Ordered, named parameter storage.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Per-channel vector (bias, norm scale), stored as `(1, len, 1, 1)`.
    Vector,
    /// Convolution coefficients `(out, in_per_group, k, k)`.
    Kernel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor4<T>,
}

impl<T: Real> Param<T> {
    /// Dimensions as recorded on disk: one entry for vectors, four for kernels.
    pub fn dims(&self) -> Vec<usize> {
        match self.kind {
            ParamKind::Vector => vec![self.value.len()],
            ParamKind::Kernel => self.value.dims().to_vec(),
        }
    }
}

/// Canonical shape for a parameter with the given on-disk dimensions.
pub fn shape_for(kind: ParamKind, dims: &[usize]) -> Option<Shape> {
    match (kind, dims) {
        (ParamKind::Vector, &[len]) => Some(Shape::new(1, len, 1, 1)),
        (ParamKind::Kernel, &[n, c, h, w]) => Some(Shape::new(n, c, h, w)),
        _ => None,
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamTree<T> {
    entries: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> PartialEq for ParamTree<T> {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl<T: Real> ParamTree<T> {
    pub fn new() -> Self {
        ParamTree {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        kind: ParamKind,
        value: Tensor4<T>,
    ) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Param { name, kind, value });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|p| p.name.as_str())
    }

    pub fn entry(&self, i: usize) -> &Param<T> {
        &self.entries[i]
    }

    pub(crate) fn entry_mut(&mut self, i: usize) -> &mut Param<T> {
        &mut self.entries[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor4<T>> {
        self.position(name)
            .map(|i| &self.entries[i].value)
            .ok_or_else(|| Error::config(format!("no parameter named `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor4<T>> {
        match self.position(name) {
            Some(i) => Ok(&mut self.entries[i].value),
            None => Err(Error::config(format!("no parameter named `{name}`"))),
        }
    }

    /// Total number of scalars across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|t| t.zeros_like())
    }

    pub fn map<U: Real>(&self, f: impl Fn(&Tensor4<T>) -> Tensor4<U>) -> ParamTree<U> {
        ParamTree {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    value: f(&p.value),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamTree<U> {
        self.map(|t| t.cast())
    }

    /// Same names, kinds and shapes in the same order.
    pub fn same_layout<U: Real>(&self, other: &ParamTree<U>) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name && a.kind == b.kind && a.value.shape() == b.value.shape()
            })
    }
}
