use indexmap::IndexMap;

use super::DenseMatrix;
use crate::error::{Error, Result};

/// Named tensors with stable insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, DenseMatrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseMatrix) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter {name}")));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&DenseMatrix> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseMatrix> {
        self.tensors.get_mut(name)
    }

    /// Replaces an existing tensor, keeping its position. Shapes must agree.
    pub fn set(&mut self, name: &str, value: DenseMatrix) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::Contract(format!(
                "{name}: shape {:?} != {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseMatrix)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut DenseMatrix)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(DenseMatrix::len).sum()
    }

    /// Same names in the same order with the same shapes.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((a, x), (b, y))| a == b && x.shape() == y.shape())
    }

    pub fn ensure_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Contract("parameter layouts differ".into()))
        }
    }

    /// Zero tensors with this store's layout.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), DenseMatrix::zeros(v.rows(), v.cols())))
                .collect(),
        }
    }

    /// Elementwise combination of two stores with identical layouts.
    pub fn zip_with(&self, other: &ParamStore, f: impl Fn(f64, f64) -> f64) -> Result<ParamStore> {
        self.ensure_same_layout(other)?;
        Ok(ParamStore {
            tensors: self
                .tensors
                .iter()
                .zip(other.tensors.values())
                .map(|((k, a), b)| (k.clone(), a.zip_map(b, &f)))
                .collect(),
        })
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            t.check_finite(name)?;
        }
        Ok(())
    }

    /// Bitwise equality of every value, distinguishing `-0.0` from `0.0`.
    pub fn bit_identical(&self, other: &ParamStore) -> bool {
        self.same_layout(other)
            && self.tensors.values().zip(other.tensors.values()).all(|(a, b)| {
                a.as_slice()
                    .iter()
                    .zip(b.as_slice())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
