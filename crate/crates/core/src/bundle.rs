use indexmap::IndexMap;
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BundleError {
    #[error("tensor name must not be empty")]
    EmptyName,
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
}

/// Ordered, uniquely named parameter tensors of one model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightBundle {
    entries: IndexMap<String, Tensor>,
}

impl WeightBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(
        entries: impl IntoIterator<Item = (String, Tensor)>,
    ) -> Result<Self, BundleError> {
        let mut bundle = Self::new();
        for (name, tensor) in entries {
            bundle.push(name, tensor)?;
        }
        Ok(bundle)
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), BundleError> {
        let name = name.into();
        if name.is_empty() {
            return Err(BundleError::EmptyName);
        }
        if self.entries.contains_key(&name) {
            return Err(BundleError::DuplicateName(name));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn same_bits(&self, other: &WeightBundle) -> bool {
        self.len() == other.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|((na, ta), (nb, tb))| na == nb && ta.same_bits(tb))
    }
}
