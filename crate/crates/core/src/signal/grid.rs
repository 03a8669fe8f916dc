//! Channel selection and the 5×9 scalp grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_ROWS: usize = 5;
pub const GRID_COLS: usize = 9;
pub const GRID_CELLS: usize = GRID_ROWS * GRID_COLS;
pub const GRID_CHANNELS: usize = 35;
pub const EPOCH_STEPS: usize = 100;
/// Values in one grid epoch: `100 × 5 × 9 × 1`.
pub const EPOCH_VALUES: usize = EPOCH_STEPS * GRID_CELLS;

/// Electrode at each grid cell, row-major; `None` is a blank cell.
pub const GRID_LAYOUT: [[Option<&str>; GRID_COLS]; GRID_ROWS] = [
    [Some("T7"), Some("C5"), Some("C3"), Some("C1"), Some("Cz"), Some("C2"), Some("C4"), Some("C6"), Some("T8")],
    [Some("TP7"), Some("CP5"), Some("CP3"), Some("CP1"), Some("CPz"), Some("CP2"), Some("CP4"), Some("CP6"), Some("TP8")],
    [Some("P7"), Some("P5"), Some("P3"), Some("P1"), Some("Pz"), Some("P2"), Some("P4"), Some("P6"), Some("P8")],
    [Some("PO7"), None, Some("PO3"), None, Some("POz"), None, Some("PO4"), None, Some("PO8")],
    [None, None, None, Some("O1"), Some("Oz"), Some("O2"), None, None, None],
];

/// Older 10-20 names accepted for their MCN equivalents.
pub const CHANNEL_ALIASES: [(&str, &str); 4] = [("T3", "T7"), ("T4", "T8"), ("T5", "P7"), ("T6", "P8")];

/// The 35 grid electrodes with their `(row, col)`, in layout order.
pub fn grid_channels() -> Vec<(&'static str, usize, usize)> {
    let mut out = Vec::with_capacity(GRID_CHANNELS);
    for (r, row) in GRID_LAYOUT.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            if let Some(name) = cell {
                out.push((*name, r, c));
            }
        }
    }
    out
}

pub fn canonical_name(label: &str) -> String {
    let trimmed = label.trim();
    for (alias, name) in CHANNEL_ALIASES {
        if trimmed.eq_ignore_ascii_case(alias) {
            return name.to_string();
        }
    }
    trimmed.to_string()
}

/// Which grid cells hold an electrode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridMask(#[serde(with = "mask_serde")] [bool; GRID_CELLS]);

mod mask_serde {
    use super::GRID_CELLS;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[bool; GRID_CELLS], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[bool; GRID_CELLS], D::Error> {
        let v = Vec::<bool>::deserialize(d)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("mask must have 45 cells"))
    }
}

impl Default for GridMask {
    fn default() -> Self {
        Self::standard()
    }
}

impl GridMask {
    pub fn standard() -> Self {
        let mut cells = [false; GRID_CELLS];
        for (_, r, c) in grid_channels() {
            cells[r * GRID_COLS + c] = true;
        }
        Self(cells)
    }

    pub fn from_cells(cells: [bool; GRID_CELLS]) -> Self {
        Self(cells)
    }

    pub fn cells(&self) -> &[bool; GRID_CELLS] {
        &self.0
    }

    pub fn is_set(&self, row: usize, col: usize) -> bool {
        self.0[row * GRID_COLS + col]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Mask over one whole epoch (`100 × 45` values, time-major).
    pub fn epoch_mask(&self) -> Vec<bool> {
        (0..EPOCH_STEPS).flat_map(|_| self.0.iter().copied()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.count() != GRID_CHANNELS {
            return Err(Error::Format {
                field: "mask",
                reason: format!("{} electrode cells, expected {GRID_CHANNELS}", self.count()),
            });
        }
        Ok(())
    }
}

/// Row index into a recording for each of the 35 grid electrodes, in
/// [`grid_channels`] order.
pub fn resolve_channels(labels: &[String]) -> Result<Vec<usize>> {
    let canon: Vec<String> = labels.iter().map(|l| canonical_name(l)).collect();
    grid_channels()
        .into_iter()
        .map(|(name, _, _)| {
            canon
                .iter()
                .position(|l| l.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::MissingChannel(name.to_string()))
        })
        .collect()
}

/// Places a `channels × 100` epoch onto the grid, time-major
/// (`grid[t * 45 + row * 9 + col]`). Blank cells stay zero.
pub fn select_and_grid(epoch: &[Vec<f64>], labels: &[String]) -> Result<Vec<f32>> {
    if epoch.len() != labels.len() {
        return Err(Error::Ingestion(format!(
            "{} channel rows but {} labels",
            epoch.len(),
            labels.len()
        )));
    }
    let rows = resolve_channels(labels)?;
    let mut grid = vec![0.0f32; EPOCH_VALUES];
    for ((_, r, c), src) in grid_channels().into_iter().zip(rows) {
        let series = &epoch[src];
        if series.len() != EPOCH_STEPS {
            return Err(Error::Ingestion(format!(
                "channel `{}` has {} samples, expected {EPOCH_STEPS}",
                labels[src],
                series.len()
            )));
        }
        for (t, &v) in series.iter().enumerate() {
            grid[t * GRID_CELLS + r * GRID_COLS + c] = v as f32;
        }
    }
    Ok(grid)
}

/// Per-cell z-score over the 100 time steps for every electrode cell.
/// Constant cells become zero; blank cells are untouched.
pub fn normalize_grid(grid: &mut [f32], mask: &GridMask) {
    for cell in 0..GRID_CELLS {
        if !mask.0[cell] {
            continue;
        }
        let series: Vec<f64> = (0..EPOCH_STEPS).map(|t| grid[t * GRID_CELLS + cell] as f64).collect();
        let n = EPOCH_STEPS as f64;
        let mean = series.iter().sum::<f64>() / n;
        let std = (series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let flat = std <= 1e-10 * (1.0 + mean.abs());
        for (t, v) in series.iter().enumerate() {
            grid[t * GRID_CELLS + cell] = if flat { 0.0 } else { ((v - mean) / std) as f32 };
        }
    }
}
