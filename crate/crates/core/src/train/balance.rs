use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{GridEpoch, Label};

/// Per-sample loss weights countering class and dataset imbalance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Indexed by label bit: `[unattended, attended]`.
    pub class: [f64; 2],
    pub dataset: BTreeMap<String, f64>,
}

impl LossWeights {
    pub fn uniform() -> Self {
        Self {
            class: [1.0, 1.0],
            dataset: BTreeMap::new(),
        }
    }

    pub fn class_weight(&self, label: Label) -> f64 {
        self.class[label as usize]
    }

    /// Datasets absent from the table weigh 1.
    pub fn dataset_weight(&self, id: &str) -> f64 {
        self.dataset.get(id).copied().unwrap_or(1.0)
    }
}

/// `w_class[c] = N / (2 N_c)` and `w_dataset[d] = N / (K N_d)`; each
/// averages to 1 over the samples.
pub fn compute_weights(epochs: &[GridEpoch]) -> Result<LossWeights> {
    if epochs.is_empty() {
        return Err(Error::Contract("cannot weight an empty dataset".into()));
    }
    let n = epochs.len() as f64;
    let mut class = [0.0; 2];
    for label in [Label::Unattended, Label::Attended] {
        let count = epochs.iter().filter(|e| e.label == label).count();
        if count == 0 {
            return Err(Error::Contract(format!("no {label} epochs to weight")));
        }
        class[label as usize] = n / (2.0 * count as f64);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in epochs {
        *counts.entry(e.dataset_id.clone()).or_default() += 1;
    }
    let k = counts.len() as f64;
    let dataset = counts.into_iter().map(|(id, c)| (id, n / (k * c as f64))).collect();
    Ok(LossWeights { class, dataset })
}
