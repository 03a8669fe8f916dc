//! Second-order IIR sections: Butterworth low/high pass via the bilinear
//! transform with pre-warping, and a 50 Hz notch.

use std::f64::consts::{PI, SQRT_2};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOWPASS_HZ: f64 = 30.0;
pub const HIGHPASS_HZ: f64 = 0.5;
pub const NOTCH_HZ: f64 = 50.0;
pub const NOTCH_Q: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Notch50,
    Lowpass30Order2,
    Highpass0p5Order2,
}

impl FilterKind {
    pub fn critical_hz(self) -> f64 {
        match self {
            FilterKind::Notch50 => NOTCH_HZ,
            FilterKind::Lowpass30Order2 => LOWPASS_HZ,
            FilterKind::Highpass0p5Order2 => HIGHPASS_HZ,
        }
    }
}

/// Transfer function `B(z) / A(z)` with `a[0] == 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct IirCoefficients {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub kind: Option<FilterKind>,
}

impl IirCoefficients {
    /// Pass-through filter.
    pub fn identity() -> Self {
        Self {
            b: vec![1.0],
            a: vec![1.0],
            kind: None,
        }
    }

    pub fn order(&self) -> usize {
        self.a.len().max(self.b.len()) - 1
    }

    /// Complex response at `freq_hz` for sampling rate `rate`.
    pub fn response(&self, freq_hz: f64, rate: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / rate;
        let z_inv = Complex64::from_polar(1.0, -w);
        let poly = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &v| acc * z_inv + v)
        };
        poly(&self.b) / poly(&self.a)
    }

    pub fn gain(&self, freq_hz: f64, rate: f64) -> f64 {
        self.response(freq_hz, rate).norm()
    }

    /// Stability of a first- or second-order denominator: both poles strictly
    /// inside the unit circle.
    pub fn is_stable(&self) -> bool {
        match self.a.as_slice() {
            [_] => true,
            [_, a1] => a1.abs() < 1.0,
            [_, a1, a2] => a2.abs() < 1.0 && a1.abs() < 1.0 + a2,
            _ => false,
        }
    }
}

/// Designs one of the fixed preprocessing filters for sampling rate `rate`.
pub fn design_iir(kind: FilterKind, rate: f64) -> Result<IirCoefficients> {
    let fc = kind.critical_hz();
    if rate.is_nan() || rate <= 0.0 || fc >= rate / 2.0 {
        return Err(Error::Config(format!(
            "{kind:?}: critical frequency {fc} Hz is not below Nyquist ({} Hz)",
            rate / 2.0
        )));
    }
    let (b, a) = match kind {
        FilterKind::Lowpass30Order2 | FilterKind::Highpass0p5Order2 => {
            let k = (PI * fc / rate).tan();
            let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
            let a = vec![1.0, 2.0 * (k * k - 1.0) * norm, (1.0 - SQRT_2 * k + k * k) * norm];
            let b = if kind == FilterKind::Lowpass30Order2 {
                let b0 = k * k * norm;
                vec![b0, 2.0 * b0, b0]
            } else {
                vec![norm, -2.0 * norm, norm]
            };
            (b, a)
        }
        FilterKind::Notch50 => {
            let w0 = 2.0 * PI * fc / rate;
            let alpha = w0.sin() / (2.0 * NOTCH_Q);
            let a0 = 1.0 + alpha;
            let c = -2.0 * w0.cos();
            (vec![1.0 / a0, c / a0, 1.0 / a0], vec![1.0, c / a0, (1.0 - alpha) / a0])
        }
    };
    let coeffs = IirCoefficients {
        b,
        a,
        kind: Some(kind),
    };
    debug_assert!(coeffs.is_stable());
    Ok(coeffs)
}

/// Direct-form II transposed recursion from zero initial conditions.
pub fn filter_apply(signal: &[f64], coeffs: &IirCoefficients) -> Vec<f64> {
    let n = coeffs.order();
    let a0 = coeffs.a[0];
    let b: Vec<f64> = (0..=n).map(|i| coeffs.b.get(i).copied().unwrap_or(0.0) / a0).collect();
    let a: Vec<f64> = (0..=n).map(|i| coeffs.a.get(i).copied().unwrap_or(0.0) / a0).collect();
    let mut z = vec![0.0; n + 1];
    signal
        .iter()
        .map(|&x| {
            let y = b[0] * x + z[0];
            for i in 1..=n {
                z[i - 1] = b[i] * x - a[i] * y + z[i];
            }
            y
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(g: f64) -> f64 {
        20.0 * g.log10()
    }

    #[test]
    fn lowpass_unity_dc_and_half_power_cutoff() {
        let f = design_iir(FilterKind::Lowpass30Order2, 250.0).unwrap();
        assert!((f.gain(0.0, 250.0) - 1.0).abs() < 1e-9);
        assert!((f.gain(30.0, 250.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        assert!((db(f.gain(30.0, 250.0)) + 3.0103).abs() < 0.05);
        assert!(f.is_stable());
    }

    #[test]
    fn highpass_blocks_dc() {
        let f = design_iir(FilterKind::Highpass0p5Order2, 250.0).unwrap();
        assert!(f.gain(0.0, 250.0) < 1e-12);
        assert!((f.gain(0.5, 250.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        assert!((f.gain(20.0, 250.0) - 1.0).abs() < 1e-3);
        let y = filter_apply(&vec![1.0; 2500], &f);
        assert!(y[2499].abs() < 1e-3);
    }

    #[test]
    fn notch_response() {
        let f = design_iir(FilterKind::Notch50, 250.0).unwrap();
        assert!(f.gain(50.0, 250.0) < 0.01);
        assert!(f.gain(10.0, 250.0) > 0.99);
        assert!(f.is_stable());
    }

    #[test]
    fn notch_attenuates_line_tone_in_time_domain() {
        let rate = 250.0;
        let f = design_iir(FilterKind::Notch50, rate).unwrap();
        let x: Vec<f64> = (0..5000).map(|i| (2.0 * PI * 50.0 * i as f64 / rate).sin()).collect();
        let y = filter_apply(&x, &f);
        let peak = y[2500..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(db(peak) <= -40.0, "{} dB", db(peak));
    }

    #[test]
    fn identity_passes_through() {
        let x = [1.0, -2.0, 3.5, 0.25];
        assert_eq!(filter_apply(&x, &IirCoefficients::identity()), x);
    }

    #[test]
    fn cutoff_at_or_above_nyquist_is_rejected() {
        assert!(matches!(design_iir(FilterKind::Notch50, 100.0), Err(Error::Config(_))));
        assert!(design_iir(FilterKind::Lowpass30Order2, 60.0).is_err());
        assert!(design_iir(FilterKind::Lowpass30Order2, 61.0).is_ok());
    }

    #[test]
    fn filtering_is_linear() {
        let f = design_iir(FilterKind::Lowpass30Order2, 500.0).unwrap();
        let x: Vec<f64> = (0..400).map(|i| ((i * 7919) % 97) as f64 / 13.0).collect();
        let y: Vec<f64> = (0..400).map(|i| (i as f64 * 0.37).cos()).collect();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.5 * a - 0.75 * b).collect();
        let fx = filter_apply(&x, &f);
        let fy = filter_apply(&y, &f);
        for (i, v) in filter_apply(&combo, &f).iter().enumerate() {
            assert!((v - (2.5 * fx[i] - 0.75 * fy[i])).abs() < 1e-9);
        }
    }
}
