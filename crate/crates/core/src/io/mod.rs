//! Synthetic data, on-disk formats and raw recording ingestion.

pub mod dataset;
pub mod synth;
pub mod weights;

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{read_columnar_all, RawRecording};

pub use dataset::{decode_dataset, encode_dataset, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use synth::{synth_generate, SynthConfig};
pub use weights::{
    decode_network, decode_network_as, decode_weights, encode_weights, load_network, load_network_as, save_weights,
    TensorRecord, WeightsManifest, WEIGHTS_MAGIC,
};

/// Reads every recording in a columnar text file.
pub fn load_recordings(path: impl AsRef<Path>) -> Result<Vec<RawRecording>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_columnar_all(std::io::BufReader::new(file))
}
