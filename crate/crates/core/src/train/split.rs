use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{GridEpoch, Label};

/// Number of groups the index set is dealt into. A holdout split uses one
/// group for validation (90:10).
pub const SPLIT_GROUPS: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Holdout,
    Kfold,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "holdout" | "holdout_90_10" => Ok(SplitMode::Holdout),
            "kfold" | "kfold_10" => Ok(SplitMode::Kfold),
            other => Err(Error::Config(format!("unknown split mode `{other}`"))),
        }
    }
}

/// Stratified assignment of every epoch index to one of ten groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub seed: u64,
    /// Group of each epoch index.
    pub assignment: Vec<usize>,
}

impl SplitPlan {
    /// How many train/validation rounds the plan defines.
    pub fn rounds(&self) -> usize {
        match self.mode {
            SplitMode::Holdout => 1,
            SplitMode::Kfold => SPLIT_GROUPS,
        }
    }

    /// Indices in group `k`, ascending.
    pub fn group(&self, k: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == k).collect()
    }

    /// `(train, validation)` indices of round `k`.
    pub fn round(&self, k: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignment.len()).partition(|&i| self.assignment[i] != k)
    }
}

/// Shuffles each (label, dataset) stratum and deals its members round-robin
/// into ten groups, so every group mirrors the global composition.
pub fn make_splits(epochs: &[GridEpoch], mode: SplitMode, seed: u64) -> Result<SplitPlan> {
    if epochs.is_empty() {
        return Err(Error::Contract("cannot split an empty dataset".into()));
    }
    for label in [Label::Unattended, Label::Attended] {
        let n = epochs.iter().filter(|e| e.label == label).count();
        if n < SPLIT_GROUPS {
            return Err(Error::Contract(format!(
                "class {label} has {n} epochs, fewer than the {SPLIT_GROUPS} split groups"
            )));
        }
    }
    let mut strata: BTreeMap<(Label, &str), Vec<usize>> = BTreeMap::new();
    for (i, e) in epochs.iter().enumerate() {
        strata.entry((e.label, e.dataset_id.as_str())).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; epochs.len()];
    let mut next = 0usize;
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = next % SPLIT_GROUPS;
            next += 1;
        }
    }
    Ok(SplitPlan { mode, seed, assignment })
}

/// Splits off every epoch of `dataset_id`: `(rest, held_out)`.
pub fn hold_out_dataset(epochs: Vec<GridEpoch>, dataset_id: &str) -> (Vec<GridEpoch>, Vec<GridEpoch>) {
    epochs.into_iter().partition(|e| e.dataset_id != dataset_id)
}

/// Clones the epochs at `indices`.
pub fn select(epochs: &[GridEpoch], indices: &[usize]) -> Vec<GridEpoch> {
    indices.iter().map(|&i| epochs[i].clone()).collect()
}
