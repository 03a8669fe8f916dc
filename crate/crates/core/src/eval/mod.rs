//! Metrics and per-dataset result tables.
//!
//! Accuracy and AUC are reported in percent. Reconstruction error is the
//! masked MSE averaged over epochs with its standard error.

mod metrics;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{masked_mse, Network};
use crate::signal::{GridEpoch, Label, EPOCH_STEPS, GRID_CELLS};
use crate::tensor::Scalar;

pub use metrics::{
    accuracy, accuracy_default, compression_ratio, default_compression_ratio, roc_auc, roc_curve, wilcoxon_normal_p,
    wilcoxon_signed_rank, MeanSe, Wilcoxon, WILCOXON_EXACT_MAX, WILCOXON_MIN_PAIRS,
};

/// Per-epoch masked MSE of the model's reconstructions.
pub fn reconstruction_errors<S: Scalar>(net: &Network<S>, epochs: &[GridEpoch]) -> Result<Vec<f64>> {
    let recon = net.reconstruct(epochs)?;
    recon
        .iter()
        .zip(epochs)
        .map(|((r, _), e)| {
            let r: Vec<f32> = r.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
            masked_mse(&e.grid, &r, &e.mask)
        })
        .collect()
}

/// Mean ± standard error of the per-epoch masked MSE.
pub fn mse_report<S: Scalar>(net: &Network<S>, epochs: &[GridEpoch]) -> Result<MeanSe> {
    MeanSe::of(&reconstruction_errors(net, epochs)?)
}

/// Per-epoch masked MSE of predicting every cell by its own temporal mean.
pub fn temporal_mean_errors(epochs: &[GridEpoch]) -> Result<Vec<f64>> {
    epochs
        .iter()
        .map(|e| {
            let mut means = [0.0f64; GRID_CELLS];
            for (i, &v) in e.grid.iter().enumerate() {
                means[i % GRID_CELLS] += v as f64 / EPOCH_STEPS as f64;
            }
            let pred: Vec<f32> = (0..e.grid.len()).map(|i| means[i % GRID_CELLS] as f32).collect();
            masked_mse(&e.grid, &pred, &e.mask)
        })
        .collect()
}

/// One row of a result table: a model on one dataset in one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub dataset: String,
    pub fold: usize,
    pub n: usize,
    pub mse: Option<MeanSe>,
    pub acc: f64,
    /// Absent when only one class is present.
    pub auc: Option<f64>,
    pub epochs_trained: Option<usize>,
    pub params: usize,
}

/// A paired significance test between two models on one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub model_a: String,
    pub model_b: String,
    pub test: Wilcoxon,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ResultRow>,
    pub comparisons: Vec<Comparison>,
    pub compression_ratio: Option<f64>,
}

/// Column order of [`MetricsReport::write_csv`].
pub const CSV_COLUMNS: [&str; 10] = [
    "model", "dataset", "fold", "n", "mse_mean", "mse_se", "acc", "auc", "epochs", "params",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// One line per row in [`CSV_COLUMNS`] order; empty fields where a
    /// metric does not apply.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Format {
            field: "csv",
            reason: e.to_string(),
        };
        w.write_record(CSV_COLUMNS).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.dataset.clone(),
                r.fold.to_string(),
                r.n.to_string(),
                opt(r.mse.map(|m| m.mean)),
                opt(r.mse.map(|m| m.se)),
                r.acc.to_string(),
                opt(r.auc),
                opt(r.epochs_trained),
                r.params.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format {
            field: "csv",
            reason: e.to_string(),
        })?;
        Ok(())
    }
}

/// Groups epoch indices by dataset id.
fn by_dataset(epochs: &[GridEpoch]) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in epochs.iter().enumerate() {
        groups.entry(e.dataset_id.as_str()).or_default().push(i);
    }
    groups
}

/// Builds one row per dataset id from precomputed scores and optional
/// per-epoch reconstruction errors.
pub fn rows_from_scores(
    model: &str,
    epochs: &[GridEpoch],
    probs: &[f64],
    errors: Option<&[f64]>,
    fold: usize,
    epochs_trained: Option<usize>,
    params: usize,
) -> Result<Vec<ResultRow>> {
    if epochs.is_empty() {
        return Err(Error::Stats("nothing to evaluate".into()));
    }
    if probs.len() != epochs.len() || errors.is_some_and(|e| e.len() != epochs.len()) {
        return Err(Error::Stats(format!("{} epochs but {} scores", epochs.len(), probs.len())));
    }
    by_dataset(epochs)
        .into_iter()
        .map(|(id, idx)| {
            let labels: Vec<Label> = idx.iter().map(|&i| epochs[i].label).collect();
            let p: Vec<f64> = idx.iter().map(|&i| probs[i]).collect();
            let mse = match errors {
                Some(e) => Some(MeanSe::of(&idx.iter().map(|&i| e[i]).collect::<Vec<_>>())?),
                None => None,
            };
            Ok(ResultRow {
                model: model.to_string(),
                dataset: id.to_string(),
                fold,
                n: idx.len(),
                mse,
                acc: accuracy_default(&labels, &p)?,
                auc: roc_auc(&labels, &p).ok(),
                epochs_trained,
                params,
            })
        })
        .collect()
}

/// Attended probabilities and, when asked, per-epoch masked MSE from one
/// inference pass.
pub fn score_model<S: Scalar>(
    net: &Network<S>,
    epochs: &[GridEpoch],
    with_reconstruction: bool,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let f = |v: S| v.to_f64().unwrap_or(f64::NAN);
    if !with_reconstruction {
        return Ok((net.classify(epochs)?.into_iter().map(f).collect(), None));
    }
    let out = net.reconstruct(epochs)?;
    let mut probs = Vec::with_capacity(out.len());
    let mut errors = Vec::with_capacity(out.len());
    for ((r, p), e) in out.iter().zip(epochs) {
        let r: Vec<f32> = r.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
        errors.push(masked_mse(&e.grid, &r, &e.mask)?);
        probs.push(f(*p));
    }
    Ok((probs, Some(errors)))
}

/// Scores `net` on `epochs`, one row per dataset id.
pub fn evaluate_model<S: Scalar>(
    net: &Network<S>,
    model: &str,
    epochs: &[GridEpoch],
    fold: usize,
    epochs_trained: Option<usize>,
    with_reconstruction: bool,
) -> Result<Vec<ResultRow>> {
    if epochs.is_empty() {
        return Err(Error::Stats("nothing to evaluate".into()));
    }
    let (probs, errors) = score_model(net, epochs, with_reconstruction)?;
    rows_from_scores(model, epochs, &probs, errors.as_deref(), fold, epochs_trained, net.count_params())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{GridMask, EPOCH_VALUES};

    fn epoch(label: Label, f: impl Fn(usize) -> f32) -> GridEpoch {
        let mask = GridMask::standard();
        GridEpoch {
            grid: (0..EPOCH_VALUES).map(|i| if mask.cells()[i % GRID_CELLS] { f(i) } else { 0.0 }).collect(),
            mask,
            label,
            dataset_id: "d".into(),
        }
    }

    #[test]
    fn temporal_mean_of_constant_cells_is_exact() {
        let e = epoch(Label::Attended, |i| (i % GRID_CELLS) as f32);
        assert_eq!(temporal_mean_errors(&[e]).unwrap(), vec![0.0]);
        // alternating ±1 around zero: every residual is 1
        let e = epoch(Label::Unattended, |i| if (i / GRID_CELLS).is_multiple_of(2) { 1.0 } else { -1.0 });
        assert_eq!(temporal_mean_errors(&[e]).unwrap(), vec![1.0]);
    }

    #[test]
    fn report_rows_and_csv() {
        let net = Network::<f32>::sslc_ae(2).unwrap();
        let mut epochs: Vec<GridEpoch> = (0..6)
            .map(|k| epoch(if k % 2 == 0 { Label::Attended } else { Label::Unattended }, |i| ((i + k) as f32 * 0.01).sin()))
            .collect();
        epochs[5].dataset_id = "e".into();
        let rows = evaluate_model(&net, "sslc-ae", &epochs, 0, Some(3), true).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].n, 5);
        assert!(rows[0].auc.is_some());
        assert!(rows[1].auc.is_none());
        let report = MetricsReport {
            rows,
            comparisons: Vec::new(),
            compression_ratio: Some(default_compression_ratio()),
        };
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(2).unwrap().starts_with("sslc-ae,e,0,1,"));
        let mut json = Vec::new();
        report.write_json(&mut json).unwrap();
        let back: MetricsReport = serde_json::from_slice(&json).unwrap();
        assert_eq!(back.rows.len(), 2);
    }

    #[test]
    fn perfect_reconstruction_reports_zero() {
        assert_eq!(MeanSe::of(&[0.0, 0.0]).unwrap().to_string(), "0.0000 ± 0.0000");
    }
}
