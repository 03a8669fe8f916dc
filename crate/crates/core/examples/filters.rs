//! Frequency responses of the preprocessing filters, and what the chain
//! does to a mixture of tones.

use erpenet::signal::{design_iir, filter_apply, fourier_resample, FilterKind};

fn amplitude(x: &[f64], rate: f64, freq: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (n, v) in x.iter().enumerate() {
        let ph = 2.0 * std::f64::consts::PI * freq * n as f64 / rate;
        re += v * ph.cos();
        im -= v * ph.sin();
    }
    2.0 * re.hypot(im) / x.len() as f64
}

fn main() -> erpenet::Result<()> {
    let rate = 500.0;
    let kinds = [FilterKind::Highpass0p5Order2, FilterKind::Lowpass30Order2, FilterKind::Notch50];
    let filters = kinds.iter().map(|&k| design_iir(k, rate)).collect::<erpenet::Result<Vec<_>>>()?;

    println!("{:>8}  {:>10} {:>10} {:>10}", "Hz", "high-pass", "low-pass", "notch");
    for f in [0.1, 0.5, 1.0, 5.0, 10.0, 30.0, 45.0, 50.0, 55.0, 100.0] {
        let db: Vec<String> = filters.iter().map(|c| format!("{:>10.2}", 20.0 * c.gain(f, rate).log10())).collect();
        println!("{f:>8.1}  {}", db.join(" "));
    }
    for (k, c) in kinds.iter().zip(&filters) {
        println!("{k:?}: order {}, stable {}", c.order(), c.is_stable());
    }

    // 10 s of 5 Hz + 50 Hz mains + 80 Hz, filtered then taken to 250 Hz
    let x: Vec<f64> = (0..5000)
        .map(|n| {
            let t = n as f64 / rate;
            let w = 2.0 * std::f64::consts::PI;
            (w * 5.0 * t).sin() + 0.8 * (w * 50.0 * t).sin() + 0.5 * (w * 80.0 * t).sin()
        })
        .collect();
    let mut y = x.clone();
    for c in &filters {
        y = filter_apply(&y, c);
    }
    let z = fourier_resample(&y, rate, 250.0)?;
    println!("\ncomponent   input  filtered  at 250 Hz");
    for f in [5.0, 50.0, 80.0] {
        println!(
            "{f:>6} Hz  {:>6.3}  {:>8.3}  {:>9.3}",
            amplitude(&x, rate, f),
            amplitude(&y[1000..], rate, f),
            amplitude(&z[500..], 250.0, f).min(9.999)
        );
    }
    Ok(())
}
