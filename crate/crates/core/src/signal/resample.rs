use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Output length for a signal of `len` samples taken from `from_rate` to
/// `to_rate`.
pub fn resampled_len(len: usize, from_rate: f64, to_rate: f64) -> usize {
    (len as f64 * to_rate / from_rate).round() as usize
}

/// Fourier-method resampling: the spectrum is truncated or zero-padded to
/// the new length and transformed back.
///
/// When the shorter of the two lengths is even, its Nyquist bin is split
/// (upsampling) or folded (downsampling) so a real input stays real.
pub fn fourier_resample(signal: &[f64], from_rate: f64, to_rate: f64) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::Config("cannot resample an empty signal".into()));
    }
    if !(from_rate > 0.0 && to_rate > 0.0) {
        return Err(Error::Config(format!(
            "sampling rates must be positive, got {from_rate} -> {to_rate}"
        )));
    }
    let n = signal.len();
    let m = resampled_len(n, from_rate, to_rate);
    if m == 0 {
        return Err(Error::Config(format!(
            "{n} samples at {from_rate} Hz leave nothing at {to_rate} Hz"
        )));
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut spec: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut spec);

    let mut out = vec![Complex64::new(0.0, 0.0); m];
    let short = n.min(m);
    let pos = short / 2 + 1;
    out[..pos].copy_from_slice(&spec[..pos]);
    let neg = short - pos;
    for k in 1..=neg {
        out[m - k] = spec[n - k];
    }
    if short.is_multiple_of(2) && short > 0 {
        let half = short / 2;
        if m < n {
            out[half] += spec[n - half];
        } else if m > n {
            let v = spec[half] * 0.5;
            out[half] = v;
            out[m - half] = v;
        }
    }
    planner.plan_fft_inverse(m).process(&mut out);
    let scale = 1.0 / n as f64;
    Ok(out.iter().map(|c| c.re * scale).collect())
}
