use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BETA_GRID, DEFAULT_BETA};
use crate::tensor::optim::OptimizerKind;

/// One hyperparameter combination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub decay: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub optimizers: Vec<OptimizerKind>,
    pub learning_rates: Vec<f64>,
    pub decays: Vec<f64>,
    pub betas: Vec<f64>,
}

impl SearchGrid {
    /// Both optimizers, rates `2^-5 … 2^-10`, decays `1e-7 … 1e-4`, beta
    /// fixed at its default.
    pub fn optimizer_search() -> Self {
        Self {
            optimizers: vec![OptimizerKind::Sgd, OptimizerKind::Rmsprop],
            learning_rates: (5..=10).map(|p| 2f64.powi(-p)).collect(),
            decays: vec![1e-7, 1e-6, 1e-5, 1e-4],
            betas: vec![DEFAULT_BETA],
        }
    }

    /// The five beta values around a fixed optimizer setting.
    pub fn beta_search(optimizer: OptimizerKind, learning_rate: f64, decay: f64) -> Self {
        Self {
            optimizers: vec![optimizer],
            learning_rates: vec![learning_rate],
            decays: vec![decay],
            betas: BETA_GRID.to_vec(),
        }
    }

    pub fn single(c: Candidate) -> Self {
        Self {
            optimizers: vec![c.optimizer],
            learning_rates: vec![c.learning_rate],
            decays: vec![c.decay],
            betas: vec![c.beta],
        }
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        let mut out = Vec::with_capacity(self.len());
        for &optimizer in &self.optimizers {
            for &learning_rate in &self.learning_rates {
                for &decay in &self.decays {
                    for &beta in &self.betas {
                        out.push(Candidate {
                            optimizer,
                            learning_rate,
                            decay,
                            beta,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.optimizers.len() * self.learning_rates.len() * self.decays.len() * self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub candidate: Candidate,
    /// `NaN` when the run diverged.
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: Candidate,
    pub best_val_loss: f64,
    /// Every combination in grid order.
    pub rows: Vec<SearchRow>,
}

fn better(a: &SearchRow, b: &SearchRow) -> bool {
    let (la, lb) = (a.val_loss, b.val_loss);
    if la.is_nan() || lb.is_nan() {
        return lb.is_nan() && !la.is_nan();
    }
    if la != lb {
        return la < lb;
    }
    let (ca, cb) = (a.candidate, b.candidate);
    if ca.learning_rate != cb.learning_rate {
        return ca.learning_rate < cb.learning_rate;
    }
    ca.decay < cb.decay
}

/// Runs `train_fn(candidate, seed)` for every combination; it returns the
/// best validation total loss of that run. Diverged runs are recorded as
/// `NaN` and never selected. Ties go to the smaller learning rate, then the
/// smaller decay.
pub fn grid_search<F>(grid: &SearchGrid, seed: u64, mut train_fn: F) -> Result<SearchOutcome>
where
    F: FnMut(&Candidate, u64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for c in grid.candidates() {
        let val_loss = match train_fn(&c, seed) {
            Ok(v) => v,
            Err(Error::Diverged { .. }) | Err(Error::NonFiniteGradient { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        rows.push(SearchRow { candidate: c, val_loss });
    }
    let mut best = &rows[0];
    for r in &rows[1..] {
        if better(r, best) {
            best = r;
        }
    }
    if best.val_loss.is_nan() {
        return Err(Error::Config("every grid combination diverged".into()));
    }
    Ok(SearchOutcome {
        best: best.candidate,
        best_val_loss: best.val_loss,
        rows,
    })
}
