use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ramp-then-decay learning rate: a quarter-sine rise from `start` to
/// `peak` over `[0, peak_epoch]`, a straight line down to `end` at
/// `end_epoch`, then constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangularSchedule {
    pub start: f64,
    pub peak: f64,
    pub end: f64,
    pub peak_epoch: usize,
    pub end_epoch: usize,
}

impl Default for TriangularSchedule {
    fn default() -> Self {
        Self {
            start: 2e-5,
            peak: 2e-3,
            end: 2e-4,
            peak_epoch: 100,
            end_epoch: 800,
        }
    }
}

impl TriangularSchedule {
    /// Same rates with the epoch anchors scaled so the decay ends at
    /// `total` epochs.
    pub fn compressed(self, total: usize) -> Self {
        let end_epoch = total.max(2);
        let peak_epoch = (self.peak_epoch * end_epoch / self.end_epoch).clamp(1, end_epoch - 1);
        Self {
            peak_epoch,
            end_epoch,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.start, self.peak, self.end];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config(format!("schedule rates must be finite and >= 0, got {rates:?}")));
        }
        if self.peak_epoch == 0 || self.end_epoch <= self.peak_epoch {
            return Err(Error::Config(format!(
                "schedule needs 0 < peak_epoch < end_epoch, got {} and {}",
                self.peak_epoch, self.end_epoch
            )));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        if epoch < self.peak_epoch {
            let phase = std::f64::consts::FRAC_PI_2 * epoch as f64 / self.peak_epoch as f64;
            self.start + (self.peak - self.start) * phase.sin()
        } else if epoch < self.end_epoch {
            let t = (epoch - self.peak_epoch) as f64 / (self.end_epoch - self.peak_epoch) as f64;
            self.peak + (self.end - self.peak) * t
        } else {
            self.end
        }
    }
}

/// The default triangular schedule: 2e-5 at epoch 0, 2e-3 at 100, 2e-4 from
/// 800 on.
pub fn triangular_lr(epoch: usize) -> f64 {
    TriangularSchedule::default().lr(epoch)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// The configured rate with per-step inverse-time decay.
    ConstantDecayed,
    /// Per-epoch rate from a triangular schedule; step decay is ignored.
    Triangular(TriangularSchedule),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_are_exact() {
        assert_eq!(triangular_lr(0), 2e-5);
        assert_eq!(triangular_lr(100), 2e-3);
        assert_eq!(triangular_lr(800), 2e-4);
        assert_eq!(triangular_lr(5000), 2e-4);
    }

    #[test]
    fn midpoint_of_decay() {
        let oracle = 2e-3 - (2e-3 - 2e-4) * 350.0 / 700.0;
        assert!((triangular_lr(450) - oracle).abs() < 1e-15);
        assert!((triangular_lr(450) - 1.1e-3).abs() < 1e-15);
    }

    #[test]
    fn ramp_is_concave_and_increasing() {
        let lr: Vec<f64> = (0..=100).map(triangular_lr).collect();
        for w in lr.windows(3) {
            assert!(w[1] > w[0]);
            assert!(w[1] - w[0] >= w[2] - w[1] - 1e-15);
        }
        for e in 100..800 {
            assert!(triangular_lr(e + 1) < triangular_lr(e));
        }
    }

    #[test]
    fn compressed_keeps_rates() {
        let s = TriangularSchedule::default().compressed(16);
        assert_eq!((s.peak_epoch, s.end_epoch), (2, 16));
        assert_eq!(s.lr(0), 2e-5);
        assert_eq!(s.lr(2), 2e-3);
        assert_eq!(s.lr(16), 2e-4);
        s.validate().unwrap();
        let tiny = TriangularSchedule::default().compressed(1);
        tiny.validate().unwrap();
    }
}
