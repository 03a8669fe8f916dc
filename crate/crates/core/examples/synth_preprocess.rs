//! Generates a synthetic oddball recording, writes it as columnar text,
//! reads it back and runs the preprocessing chain into a dataset file.
//!
//! ```text
//! cargo run --release --example synth_preprocess -- /tmp/synth
//! ```

use std::path::PathBuf;

use erpenet::io::{load_recordings, save_dataset, synth_generate, SynthConfig};
use erpenet::signal::{preprocess, write_columnar, Label, PreprocessConfig, GRID_CELLS, GRID_COLS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().display().to_string()));
    let cfg = SynthConfig {
        n_subjects: 2,
        trials_per_subject: 200,
        seed: 7,
        ..SynthConfig::default()
    };
    let recordings = synth_generate(&cfg)?;
    let raw = dir.join("synth_raw.txt");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&raw)?);
        for r in &recordings {
            write_columnar(r, &mut f)?;
        }
    }
    println!(
        "wrote {} recordings ({} channels at {} Hz, {} samples each) to {}",
        recordings.len(),
        recordings[0].channels.len(),
        recordings[0].rate,
        recordings[0].len(),
        raw.display()
    );

    let mut epochs = Vec::new();
    for rec in load_recordings(&raw)? {
        let out = preprocess(&rec, &PreprocessConfig { notch: true, ..Default::default() })?;
        if out.skipped > 0 {
            println!("{}: skipped {} epochs at the edges", rec.dataset_id, out.skipped);
        }
        epochs.extend(out.epochs);
    }
    let attended = epochs.iter().filter(|e| e.label == Label::Attended).count();
    println!("{} epochs, {attended} attended", epochs.len());

    // grand averages at Pz, 300 ms after the stimulus (epochs start at 200 ms)
    let pz = 2 * GRID_COLS + 4;
    let at = 25 * GRID_CELLS + pz;
    for label in [Label::Attended, Label::Unattended] {
        let vals: Vec<f32> = epochs.iter().filter(|e| e.label == label).map(|e| e.grid[at]).collect();
        let mean = vals.iter().sum::<f32>() / vals.len() as f32;
        println!("  {label:<10} mean z-score at Pz, 300 ms: {mean:+.3}");
    }

    let out = dir.join("synth.erpe");
    save_dataset(&out, &epochs)?;
    println!("dataset written to {}", out.display());
    Ok(())
}
