//! Synthetic oddball recordings.
//!
//! Background activity is a handful of spatially smooth sources, each a
//! mix of 10 Hz alpha and 1/f noise, projected onto the scalp plus a little
//! independent sensor noise; every channel is then scaled to `noise_std`.
//! Attended trials add a positive Gaussian deflection centred on Cz, CPz
//! and Pz that falls off with grid distance.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::epoch::{EPOCH_END_S, EPOCH_START_S};
use crate::signal::{grid_channels, Label, RawRecording};

/// Channels outside the grid that are generated too, so ingestion has
/// something to drop.
pub const EXTRA_CHANNELS: [&str; 2] = ["Fp1", "Fp2"];
/// Electrodes where the deflection has full amplitude, as (row, col).
const PEAK_CELLS: [(f64, f64); 3] = [(0.0, 4.0), (1.0, 4.0), (2.0, 4.0)];
const P300_SPREAD_CELLS: f64 = 1.5;
const BACKGROUND_SOURCES: usize = 6;
const SOURCE_SPREAD_CELLS: f64 = 2.0;
const SENSOR_NOISE_SHARE: f64 = 0.1;
const ALPHA_HZ: f64 = 10.0;
const ALPHA_BANDWIDTH_HZ: f64 = 1.0;
const LEAD_S: f64 = 0.5;
const TAIL_S: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    /// Share of attended (rare) trials.
    pub attended_fraction: f64,
    pub p300_amplitude: f64,
    /// Peak time after the marker.
    pub p300_latency_s: f64,
    /// Half-width of the deflection: the Gaussian's standard deviation is
    /// half of this, so `latency ± width` spans ±2σ.
    pub p300_width_s: f64,
    /// Standard deviation of the background on every channel.
    pub noise_std: f64,
    /// Fraction of background variance from alpha; the rest is 1/f.
    pub alpha_share: f64,
    pub rate: f64,
    /// Stimulus onset interval.
    pub isi_s: f64,
    pub dataset_id: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 1,
            trials_per_subject: 500,
            attended_fraction: 0.2,
            p300_amplitude: 10.0,
            p300_latency_s: 0.3,
            p300_width_s: 0.1,
            noise_std: 5.0,
            alpha_share: 0.5,
            rate: 250.0,
            isi_s: 0.8,
            dataset_id: "synth".into(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_subjects == 0 || self.trials_per_subject == 0 {
            return bad("need at least one subject and one trial".into());
        }
        if !(self.attended_fraction > 0.0 && self.attended_fraction < 1.0) {
            return bad(format!("attended_fraction {} must lie in (0, 1)", self.attended_fraction));
        }
        let (lo, hi) = (self.p300_latency_s - self.p300_width_s, self.p300_latency_s + self.p300_width_s);
        if !(self.p300_width_s > 0.0 && lo >= EPOCH_START_S - 1e-12 && hi <= EPOCH_END_S + 1e-12) {
            return bad(format!(
                "deflection window [{lo}, {hi}] s must lie inside [{EPOCH_START_S}, {EPOCH_END_S}] s"
            ));
        }
        if !(self.p300_amplitude >= 0.0 && self.p300_amplitude.is_finite()) {
            return bad(format!("p300_amplitude {} must be finite and >= 0", self.p300_amplitude));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {} must be positive", self.noise_std));
        }
        if !(0.0..=1.0).contains(&self.alpha_share) {
            return bad(format!("alpha_share {} must lie in [0, 1]", self.alpha_share));
        }
        if !(self.rate >= 100.0 && self.rate.is_finite()) {
            return bad(format!("rate {} Hz is below the 100 Hz minimum", self.rate));
        }
        if self.isi_s < EPOCH_END_S {
            return bad(format!("isi_s {} is shorter than the {EPOCH_END_S} s epoch", self.isi_s));
        }
        Ok(())
    }
}

fn shaped_noise(n: usize, rate: f64, rng: &mut ChaCha8Rng, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * rate / n as f64;
        *v *= gain(f);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    standardize(&mut x);
    x
}

fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for v in x.iter_mut() {
        *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
    }
}

/// Grid position of every generated channel; extra channels sit in front
/// of the grid.
fn positions() -> Vec<(String, f64, f64)> {
    let mut out: Vec<(String, f64, f64)> = EXTRA_CHANNELS
        .iter()
        .enumerate()
        .map(|(i, n)| (n.to_string(), -3.0, 3.0 + 2.0 * i as f64))
        .collect();
    out.extend(grid_channels().into_iter().map(|(n, r, c)| (n.to_string(), r as f64, c as f64)));
    out
}

/// Spatial weight of the attended deflection at a grid position.
pub fn p300_topography(row: f64, col: f64) -> f64 {
    let d2 = PEAK_CELLS
        .iter()
        .map(|(r, c)| (row - r).powi(2) + (col - c).powi(2))
        .fold(f64::INFINITY, f64::min);
    (-d2 / (2.0 * P300_SPREAD_CELLS * P300_SPREAD_CELLS)).exp()
}

fn subject(cfg: &SynthConfig, index: usize) -> RawRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let isi = (cfg.isi_s * cfg.rate).round() as usize;
    let lead = (LEAD_S * cfg.rate).round() as usize;
    let len = lead + cfg.trials_per_subject * isi + (TAIL_S * cfg.rate).round() as usize;

    let n_attended = ((cfg.attended_fraction * cfg.trials_per_subject as f64).round() as usize).clamp(1, cfg.trials_per_subject);
    let mut labels: Vec<Label> = (0..cfg.trials_per_subject)
        .map(|i| if i < n_attended { Label::Attended } else { Label::Unattended })
        .collect();
    labels.shuffle(&mut rng);
    let markers: Vec<(usize, Label)> = labels.iter().enumerate().map(|(i, &l)| (lead + i * isi, l)).collect();

    let alpha_gain = cfg.alpha_share.sqrt();
    let pink_gain = (1.0 - cfg.alpha_share).sqrt();
    let sources: Vec<Vec<f64>> = (0..BACKGROUND_SOURCES)
        .map(|_| {
            let alpha = shaped_noise(len, cfg.rate, &mut rng, |f| (-0.5 * ((f - ALPHA_HZ) / ALPHA_BANDWIDTH_HZ).powi(2)).exp());
            let pink = shaped_noise(len, cfg.rate, &mut rng, |f| if f > 0.0 { 1.0 / f.sqrt() } else { 0.0 });
            alpha.iter().zip(&pink).map(|(a, p)| alpha_gain * a + pink_gain * p).collect()
        })
        .collect();
    let centres: Vec<(f64, f64)> = (0..BACKGROUND_SOURCES)
        .map(|_| (rng.random_range(-1.0..5.0), rng.random_range(-1.0..9.0)))
        .collect();

    let sigma = cfg.p300_width_s / 2.0;
    let bump: Vec<f64> = (0..isi)
        .map(|k| {
            let t = k as f64 / cfg.rate;
            (-0.5 * ((t - cfg.p300_latency_s) / sigma).powi(2)).exp()
        })
        .collect();

    let mut channels = Vec::new();
    let mut samples = Vec::new();
    for (name, row, col) in positions() {
        let w: Vec<f64> = centres
            .iter()
            .map(|(r, c)| (-((row - r).powi(2) + (col - c).powi(2)) / (2.0 * SOURCE_SPREAD_CELLS * SOURCE_SPREAD_CELLS)).exp())
            .collect();
        let mut x: Vec<f64> = (0..len)
            .map(|t| {
                let mixed: f64 = w.iter().zip(&sources).map(|(w, s)| w * s[t]).sum();
                mixed + SENSOR_NOISE_SHARE * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        standardize(&mut x);
        for v in x.iter_mut() {
            *v *= cfg.noise_std;
        }
        let amp = cfg.p300_amplitude * p300_topography(row, col);
        if amp > 0.0 {
            for &(m, l) in &markers {
                if l == Label::Attended {
                    for (k, b) in bump.iter().enumerate() {
                        if m + k < len {
                            x[m + k] += amp * b;
                        }
                    }
                }
            }
        }
        channels.push(name);
        samples.push(x);
    }
    RawRecording {
        channels,
        rate: cfg.rate,
        samples,
        markers,
        dataset_id: cfg.dataset_id.clone(),
    }
}

/// One recording per subject, all tagged with `cfg.dataset_id`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<RawRecording>> {
    cfg.validate()?;
    Ok((0..cfg.n_subjects).map(|s| subject(cfg, s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            trials_per_subject: 40,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_generate(&small(3)).unwrap();
        assert_eq!(a, synth_generate(&small(3)).unwrap());
        assert_ne!(a, synth_generate(&small(4)).unwrap());
    }

    #[test]
    fn shape_and_labels() {
        let cfg = SynthConfig {
            n_subjects: 2,
            ..small(1)
        };
        let recs = synth_generate(&cfg).unwrap();
        assert_eq!(recs.len(), 2);
        assert_ne!(recs[0].samples, recs[1].samples);
        for r in &recs {
            r.validate().unwrap();
            assert_eq!(r.channels.len(), 37);
            assert_eq!(r.markers.len(), 40);
            assert_eq!(r.markers.iter().filter(|m| m.1 == Label::Attended).count(), 8);
        }
    }

    #[test]
    fn grand_average_peaks_at_latency() {
        let cfg = SynthConfig {
            trials_per_subject: 400,
            p300_amplitude: 20.0,
            ..small(9)
        };
        let rec = &synth_generate(&cfg).unwrap()[0];
        let pz = &rec.samples[rec.channels.iter().position(|c| c == "Pz").unwrap()];
        let n = (0.6 * cfg.rate) as usize;
        let mut diff = vec![0.0; n];
        for label in [Label::Attended, Label::Unattended] {
            let trials: Vec<usize> = rec.markers.iter().filter(|m| m.1 == label).map(|m| m.0).collect();
            let sign = if label == Label::Attended { 1.0 } else { -1.0 };
            for &m in &trials {
                for (k, d) in diff.iter_mut().enumerate() {
                    *d += sign * pz[m + k] / trials.len() as f64;
                }
            }
        }
        let peak = (0..n).max_by(|&a, &b| diff[a].total_cmp(&diff[b])).unwrap();
        assert!((peak as f64 / cfg.rate - 0.3).abs() <= 0.03, "peak at {} s", peak as f64 / cfg.rate);
    }

    #[test]
    fn background_has_configured_spread() {
        let cfg = SynthConfig {
            p300_amplitude: 0.0,
            ..small(2)
        };
        let rec = &synth_generate(&cfg).unwrap()[0];
        for ch in &rec.samples {
            let n = ch.len() as f64;
            let mean = ch.iter().sum::<f64>() / n;
            let sd = (ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!((sd - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn topography_peaks_centro_parietally() {
        assert_eq!(p300_topography(1.0, 4.0), 1.0);
        assert!(p300_topography(2.0, 2.0) < p300_topography(2.0, 3.0));
        assert!(p300_topography(4.0, 4.0) < p300_topography(3.0, 4.0));
    }

    #[test]
    fn invalid_windows_are_rejected() {
        let late = SynthConfig {
            p300_latency_s: 0.55,
            ..Default::default()
        };
        assert!(matches!(synth_generate(&late), Err(Error::Config(_))));
        let all = SynthConfig {
            attended_fraction: 1.0,
            ..Default::default()
        };
        assert!(synth_generate(&all).is_err());
    }
}
