//! From raw multi-channel recordings to normalized grid epochs.
//!
//! [`preprocess`] runs the whole chain: optional 50 Hz notch, 0.5 Hz high
//! pass and 30 Hz low pass at the source rate, Fourier resampling to
//! 250 Hz, stimulus-locked epoching, placement on the 5×9 grid and per-cell
//! z-scoring.

pub mod columnar;
pub mod epoch;
pub mod grid;
pub mod iir;
pub mod resample;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use columnar::{read_columnar, read_columnar_all, write_columnar};
pub use epoch::{extract_epochs, Epochs, RawEpoch};
pub use grid::{
    grid_channels, normalize_grid, select_and_grid, GridMask, EPOCH_STEPS, EPOCH_VALUES, GRID_CELLS,
    GRID_CHANNELS, GRID_COLS, GRID_ROWS,
};
pub use iir::{design_iir, filter_apply, FilterKind, IirCoefficients};
pub use resample::fourier_resample;

/// Working sampling rate of every epoch.
pub const TARGET_RATE: f64 = 250.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Unattended = 0,
    Attended = 1,
}

impl Label {
    pub fn as_f32(self) -> f32 {
        self as u8 as f32
    }

    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(Label::Unattended),
            1 => Ok(Label::Attended),
            other => Err(Error::Format {
                field: "label",
                reason: format!("expected 0 or 1, found {other}"),
            }),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Attended => "attended",
            Label::Unattended => "unattended",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "attended" | "1" => Ok(Label::Attended),
            "unattended" | "0" => Ok(Label::Unattended),
            _ => Err(format!("unknown label `{s}` (expected attended or unattended)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub channels: Vec<String>,
    pub rate: f64,
    /// One row per channel.
    pub samples: Vec<Vec<f64>>,
    pub markers: Vec<(usize, Label)>,
    pub dataset_id: String,
}

impl RawRecording {
    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::Ingestion(format!("sampling rate must be positive, got {}", self.rate)));
        }
        if self.samples.len() != self.channels.len() {
            return Err(Error::Ingestion(format!(
                "{} channel labels but {} sample rows",
                self.channels.len(),
                self.samples.len()
            )));
        }
        let len = self.len();
        if let Some((i, row)) = self.samples.iter().enumerate().find(|(_, r)| r.len() != len) {
            return Err(Error::Ingestion(format!(
                "channel `{}` has {} samples, expected {len}",
                self.channels[i],
                row.len()
            )));
        }
        if let Some(&(m, _)) = self.markers.iter().find(|(m, _)| *m >= len) {
            return Err(Error::Ingestion(format!("marker at sample {m} is beyond the record length {len}")));
        }
        Ok(())
    }
}

/// One normalized training instance: a `100 × 5 × 9 × 1` grid stored
/// time-major (`grid[t * 45 + row * 9 + col]`).
#[derive(Clone, Debug, PartialEq)]
pub struct GridEpoch {
    pub grid: Vec<f32>,
    pub mask: GridMask,
    pub label: Label,
    pub dataset_id: String,
}

impl GridEpoch {
    pub fn validate(&self) -> Result<()> {
        if self.grid.len() != EPOCH_VALUES {
            return Err(Error::dim(format!(
                "grid epoch has {} values, expected {EPOCH_VALUES}",
                self.grid.len()
            )));
        }
        self.mask.validate()?;
        for (i, &v) in self.grid.iter().enumerate() {
            if !self.mask.cells()[i % GRID_CELLS] && v != 0.0 {
                return Err(Error::Contract(format!("blank cell {} is nonzero at t={}", i % GRID_CELLS, i / GRID_CELLS)));
            }
        }
        Ok(())
    }
}

/// Per-cell z-scoring of a grid epoch.
pub fn normalize_epoch(mut ge: GridEpoch) -> GridEpoch {
    normalize_grid(&mut ge.grid, &ge.mask);
    ge
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Apply the 50 Hz notch before band-limiting.
    pub notch: bool,
    pub target_rate: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            notch: false,
            target_rate: TARGET_RATE,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Preprocessed {
    pub epochs: Vec<GridEpoch>,
    pub skipped: usize,
}

/// Filters every channel at its source rate.
pub fn filter_channels(rec: &RawRecording, notch: bool) -> Result<Vec<Vec<f64>>> {
    let mut kinds = Vec::with_capacity(3);
    if notch {
        kinds.push(FilterKind::Notch50);
    }
    kinds.extend([FilterKind::Highpass0p5Order2, FilterKind::Lowpass30Order2]);
    let filters = kinds
        .into_iter()
        .map(|k| design_iir(k, rec.rate))
        .collect::<Result<Vec<_>>>()?;
    Ok(rec
        .samples
        .iter()
        .map(|row| filters.iter().fold(row.clone(), |x, f| filter_apply(&x, f)))
        .collect())
}

/// Runs the full chain on one recording.
pub fn preprocess(rec: &RawRecording, config: &PreprocessConfig) -> Result<Preprocessed> {
    rec.validate()?;
    let rows = grid::resolve_channels(&rec.channels)?;
    let labels: Vec<String> = grid_channels().iter().map(|(n, _, _)| n.to_string()).collect();
    let selected = RawRecording {
        channels: labels.clone(),
        rate: rec.rate,
        samples: rows.iter().map(|&r| rec.samples[r].clone()).collect(),
        markers: rec.markers.clone(),
        dataset_id: rec.dataset_id.clone(),
    };
    let filtered = filter_channels(&selected, config.notch)?;
    let samples = filtered
        .iter()
        .map(|row| fourier_resample(row, rec.rate, config.target_rate))
        .collect::<Result<Vec<_>>>()?;
    let scale = config.target_rate / rec.rate;
    let resampled = RawRecording {
        channels: labels.clone(),
        rate: config.target_rate,
        samples,
        markers: rec
            .markers
            .iter()
            .map(|&(m, l)| ((m as f64 * scale).round() as usize, l))
            .collect(),
        dataset_id: rec.dataset_id.clone(),
    };
    let cut = extract_epochs(&resampled);
    let mask = GridMask::standard();
    let epochs = cut
        .epochs
        .iter()
        .map(|e| {
            let grid = select_and_grid(&e.samples, &labels)?;
            Ok(normalize_epoch(GridEpoch {
                grid,
                mask,
                label: e.label,
                dataset_id: rec.dataset_id.clone(),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Preprocessed {
        epochs,
        skipped: cut.skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recording(rate: f64, seconds: f64) -> RawRecording {
        let n = (rate * seconds) as usize;
        let mut channels: Vec<String> = grid_channels().iter().map(|(c, _, _)| c.to_string()).collect();
        channels.insert(0, "Fp1".into());
        let samples = channels
            .iter()
            .enumerate()
            .map(|(c, _)| {
                (0..n)
                    .map(|i| {
                        let t = i as f64 / rate;
                        (2.0 * std::f64::consts::PI * (3.0 + c as f64 * 0.3) * t).sin() + 0.4 * (c as f64 * 1.7 + 13.0 * t).cos()
                    })
                    .collect()
            })
            .collect();
        let step = rate as usize;
        let markers = (1..seconds as usize)
            .map(|s| (s * step, if s % 3 == 0 { Label::Attended } else { Label::Unattended }))
            .collect();
        RawRecording {
            channels,
            rate,
            samples,
            markers,
            dataset_id: "unit".into(),
        }
    }

    #[test]
    fn pipeline_yields_valid_epochs() {
        let rec = recording(512.0, 6.0);
        let out = preprocess(&rec, &PreprocessConfig { notch: true, ..Default::default() }).unwrap();
        assert_eq!(out.epochs.len() + out.skipped, rec.markers.len());
        assert_eq!(out.epochs.len(), 5);
        for e in &out.epochs {
            e.validate().unwrap();
            assert_eq!(e.grid.len(), EPOCH_VALUES);
        }
        assert_eq!(out.epochs[2].label, Label::Attended);
    }

    #[test]
    fn missing_channel_aborts_pipeline() {
        let mut rec = recording(250.0, 3.0);
        let i = rec.channels.iter().position(|c| c == "Oz").unwrap();
        rec.channels.remove(i);
        rec.samples.remove(i);
        assert!(matches!(preprocess(&rec, &PreprocessConfig::default()), Err(Error::MissingChannel(c)) if c == "Oz"));
    }

    #[test]
    fn label_text_and_bits() {
        assert_eq!("Attended".parse::<Label>().unwrap(), Label::Attended);
        assert_eq!(Label::from_bit(0).unwrap(), Label::Unattended);
        assert!(Label::from_bit(2).is_err());
        assert_eq!(Label::Attended.to_string(), "attended");
    }
}
