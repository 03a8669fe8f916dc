use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::arch::ParamSlot;

pub const WEIGHTS_FORMAT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry<S = f32> {
    pub tensor: Tensor<S>,
    /// Batch-norm running statistics are stored but not trained.
    pub trainable: bool,
}

/// Every tensor of a built model keyed by name, tagged with the fingerprint
/// of the architecture it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<S = f32> {
    pub fingerprint: String,
    pub format_version: u16,
    entries: BTreeMap<String, WeightEntry<S>>,
}

impl<S: Scalar> ModelWeights<S> {
    pub fn new(fingerprint: String) -> Self {
        Self {
            fingerprint,
            format_version: WEIGHTS_FORMAT_VERSION,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate weight tensor `{name}`")));
        }
        self.entries.insert(name, WeightEntry { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| Error::Contract(format!("no weight tensor `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.tensor)
            .ok_or_else(|| Error::Contract(format!("no weight tensor `{name}`")))
    }

    pub fn entry(&self, name: &str) -> Option<&WeightEntry<S>> {
        self.entries.get(name)
    }

    /// Entries in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &WeightEntry<S>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut WeightEntry<S>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Element count over trainable tensors.
    pub fn trainable_count(&self) -> usize {
        self.entries.values().filter(|e| e.trainable).map(|e| e.tensor.len()).sum()
    }

    /// Checks that the entries are exactly `slots`, with matching shapes and
    /// flags, and that the fingerprint is `expected`.
    pub fn check_against(&self, expected: &str, slots: &[ParamSlot]) -> Result<()> {
        if self.fingerprint != expected {
            return Err(Error::Fingerprint {
                expected: expected.to_string(),
                found: self.fingerprint.clone(),
            });
        }
        for slot in slots {
            let e = self
                .entries
                .get(&slot.name)
                .ok_or_else(|| Error::Contract(format!("weights lack tensor `{}`", slot.name)))?;
            if e.tensor.shape() != slot.shape.as_slice() || e.trainable != slot.trainable {
                return Err(Error::Contract(format!(
                    "tensor `{}` is {:?} (trainable {}), architecture wants {:?} (trainable {})",
                    slot.name,
                    e.tensor.shape(),
                    e.trainable,
                    slot.shape,
                    slot.trainable
                )));
            }
        }
        if self.entries.len() != slots.len() {
            let extra: Vec<&str> = self
                .names()
                .filter(|n| !slots.iter().any(|s| s.name == *n))
                .collect();
            return Err(Error::Contract(format!("unexpected weight tensors {extra:?}")));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ModelWeights<T> {
        ModelWeights {
            fingerprint: self.fingerprint.clone(),
            format_version: self.format_version,
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        WeightEntry {
                            tensor: e.tensor.cast(),
                            trainable: e.trainable,
                        },
                    )
                })
                .collect(),
        }
    }
}
