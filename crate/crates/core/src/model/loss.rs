//! Reconstruction, classification and joint objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{GridEpoch, GridMask, Label, EPOCH_VALUES, GRID_CELLS};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Clamp applied to probabilities before taking logarithms.
pub const BCE_EPSILON: f64 = 1e-7;
pub const DEFAULT_BETA: f64 = 0.667;
pub const BETA_GRID: [f64; 5] = [0.25, 0.333, 0.5, 0.667, 0.75];
/// Probabilities at or above this are classified as attended.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BceForm {
    /// `-y ln p - (1 - y) ln(1 - p)`.
    #[default]
    Full,
    /// Only the `-y ln p` term.
    AttendedOnly,
}

impl BceForm {
    pub fn is_full(self) -> bool {
        self == BceForm::Full
    }
}

/// Mean squared error over electrode cells × 100 steps only.
pub fn masked_mse(target: &[f32], recon: &[f32], mask: &GridMask) -> Result<f64> {
    if target.len() != EPOCH_VALUES || recon.len() != EPOCH_VALUES {
        return Err(Error::dim(format!(
            "masked_mse needs two {EPOCH_VALUES}-value epochs, got {} and {}",
            target.len(),
            recon.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (&t, &r)) in target.iter().zip(recon).enumerate() {
        if mask.cells()[i % GRID_CELLS] {
            let d = r as f64 - t as f64;
            sum += d * d;
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Class-weighted binary cross-entropy of one prediction.
pub fn weighted_bce(y: Label, y_hat: f64, w_class: f64, form: BceForm) -> f64 {
    w_class * crate::tensor::bce_term(y.as_f32() as f64, y_hat, BCE_EPSILON, form.is_full())
}

/// `w_dataset * (beta * w_class * BCE + masked MSE)` for one epoch.
pub fn total_loss(
    s: &GridEpoch,
    recon: &[f32],
    y_hat: f64,
    w_class: f64,
    w_dataset: f64,
    beta: f64,
    form: BceForm,
) -> Result<f64> {
    let mse = masked_mse(&s.grid, recon, &s.mask)?;
    Ok(w_dataset * (beta * weighted_bce(s.label, y_hat, w_class, form) + mse))
}

/// What a training step minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// Reconstruction plus `beta`-weighted classification.
    Joint { beta: f64 },
    /// Classification only.
    Classification,
}

impl Objective {
    pub fn needs_decoder(self) -> bool {
        matches!(self, Objective::Joint { .. })
    }
}

/// Per-sample weights and targets for one mini-batch.
pub struct BatchTargets<'a, S> {
    pub grids: &'a Tensor<S>,
    pub mask: &'a GridMask,
    pub labels: &'a [S],
    pub w_class: &'a [S],
    pub w_dataset: &'a [S],
}

pub struct LossTerms {
    /// Scalar batch loss.
    pub total: Var,
    pub mse: Option<Var>,
    pub bce: Var,
}

/// Builds the batch-mean objective on the graph:
/// `(1/B) Σ w_d (β w_c BCE + MSE)` or `(1/B) Σ w_d w_c BCE`.
pub fn batch_loss<S: Scalar>(
    g: &mut Graph<S>,
    prob: Var,
    recon: Option<Var>,
    targets: &BatchTargets<'_, S>,
    objective: Objective,
    form: BceForm,
) -> Result<LossTerms> {
    let bce = g.bce(prob, targets.labels, S::lit(BCE_EPSILON), form.is_full())?;
    match objective {
        Objective::Classification => {
            let w: Vec<S> = targets.w_class.iter().zip(targets.w_dataset).map(|(&c, &d)| c * d).collect();
            let total = g.weighted_mean(bce, &w)?;
            Ok(LossTerms { total, mse: None, bce })
        }
        Objective::Joint { beta } => {
            let recon = recon.ok_or_else(|| Error::Contract("joint objective needs a reconstruction".into()))?;
            let mse = g.masked_mse(recon, targets.grids, &targets.mask.epoch_mask())?;
            let b = S::lit(beta);
            let wb: Vec<S> = targets
                .w_class
                .iter()
                .zip(targets.w_dataset)
                .map(|(&c, &d)| b * c * d)
                .collect();
            let cls = g.weighted_mean(bce, &wb)?;
            let rec = g.weighted_mean(mse, targets.w_dataset)?;
            let total = g.add(cls, rec)?;
            Ok(LossTerms {
                total,
                mse: Some(mse),
                bce,
            })
        }
    }
}
