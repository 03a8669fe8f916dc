//! Saves a network and a dataset, reads both back and shows what the
//! files carry.

use erpenet::io::{decode_weights, encode_weights, load_dataset, load_network, save_dataset, save_weights, synth_generate, SynthConfig};
use erpenet::model::Network;
use erpenet::signal::{preprocess, PreprocessConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir();
    let net = Network::<f32>::sslc_ae(4)?;
    let path = dir.join("sslc_example.erpw");
    save_weights(&path, &net)?;
    let bytes = std::fs::read(&path)?;
    let (manifest, _) = decode_weights(&bytes)?;
    println!(
        "{}: {} bytes, {} tensors, blob crc32 {:08x}, architecture {}",
        path.display(),
        bytes.len(),
        manifest.tensors.len(),
        manifest.crc32,
        manifest.fingerprint
    );
    for t in &manifest.tensors {
        println!("  {:<24} {:?} at byte {}", t.name, t.shape, t.offset);
    }
    let back = load_network(&path)?;
    assert_eq!(encode_weights(&back)?, bytes);
    println!("reloaded network re-encodes to the same bytes");

    let mut flipped = bytes.clone();
    let at = flipped.len() / 2;
    flipped[at] ^= 0x10;
    match decode_weights(&flipped) {
        Err(e) => println!("one flipped bit: {e}"),
        Ok(_) => println!("one flipped bit went unnoticed"),
    }

    let recs = synth_generate(&SynthConfig { trials_per_subject: 40, ..SynthConfig::default() })?;
    let epochs = preprocess(&recs[0], &PreprocessConfig::default())?.epochs;
    let data = dir.join("example.erpe");
    save_dataset(&data, &epochs)?;
    let loaded = load_dataset(&data)?;
    println!(
        "{}: {} epochs written, {} read back, identical: {}",
        data.display(),
        epochs.len(),
        loaded.len(),
        loaded == epochs
    );
    Ok(())
}
