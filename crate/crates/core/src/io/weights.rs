//! Weights file: a JSON manifest followed by a blob of f32 values.
//!
//! ```text
//! "ERPW" | manifest length (u32 LE) | manifest (UTF-8 JSON) | blob
//! ```
//!
//! The manifest records the architecture and its fingerprint, every
//! tensor's name, shape, byte offset into the blob, element count and
//! trainable flag, the blob length and the blob's CRC-32. Tensors appear in
//! name order and the blob holds them back to back as little-endian f32.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Reader;
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelWeights, Network, WEIGHTS_FORMAT_VERSION};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"ERPW";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Element count.
    pub len: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub format_version: u16,
    pub fingerprint: String,
    pub architecture: Architecture,
    pub tensors: Vec<TensorRecord>,
    pub blob_len: usize,
    pub crc32: u32,
}

fn format_err(field: &'static str, reason: String) -> Error {
    Error::Format { field, reason }
}

pub fn encode_weights(net: &Network<f32>) -> Result<Vec<u8>> {
    let weights = net.weights();
    let mut blob = Vec::with_capacity(4 * weights.iter().map(|(_, e)| e.tensor.len()).sum::<usize>());
    let mut tensors = Vec::with_capacity(weights.len());
    for (name, e) in weights.iter() {
        tensors.push(TensorRecord {
            name: name.to_string(),
            shape: e.tensor.shape().to_vec(),
            offset: blob.len(),
            len: e.tensor.len(),
            trainable: e.trainable,
        });
        for v in e.tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = WeightsManifest {
        format_version: weights.format_version,
        fingerprint: weights.fingerprint.clone(),
        architecture: net.architecture().clone(),
        tensors,
        blob_len: blob.len(),
        crc32: crc32fast::hash(&blob),
    };
    let text = serde_json::to_vec(&manifest)?;
    let len = u32::try_from(text.len()).map_err(|_| format_err("manifest", "longer than u32::MAX bytes".into()))?;
    let mut out = Vec::with_capacity(8 + text.len() + blob.len());
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&blob);
    Ok(out)
}

/// Parses and verifies a weights file without checking it against any
/// expected architecture.
pub fn decode_weights(bytes: &[u8]) -> Result<(WeightsManifest, ModelWeights<f32>)> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    if magic != WEIGHTS_MAGIC {
        return Err(format_err("magic", format!("expected \"ERPW\", found {magic:?}")));
    }
    let len = r.u32()? as usize;
    let manifest: WeightsManifest =
        serde_json::from_slice(r.take(len)?).map_err(|e| format_err("manifest", e.to_string()))?;
    if manifest.format_version != WEIGHTS_FORMAT_VERSION {
        return Err(format_err(
            "format_version",
            format!("expected {WEIGHTS_FORMAT_VERSION}, found {}", manifest.format_version),
        ));
    }
    let blob = r.take(manifest.blob_len)?;
    if r.remaining() != 0 {
        return Err(format_err("blob", format!("{} bytes beyond the declared blob length", r.remaining())));
    }
    let crc = crc32fast::hash(blob);
    if crc != manifest.crc32 {
        return Err(format_err("checksum", format!("stored {:08x}, computed {crc:08x}", manifest.crc32)));
    }
    let derived = manifest.architecture.fingerprint();
    if derived != manifest.fingerprint {
        return Err(format_err(
            "fingerprint",
            format!("manifest says {} but its architecture hashes to {derived}", manifest.fingerprint),
        ));
    }
    let mut spans: Vec<(usize, usize, &str)> = Vec::with_capacity(manifest.tensors.len());
    let mut weights = ModelWeights::new(manifest.fingerprint.clone());
    for t in &manifest.tensors {
        let elems: usize = t.shape.iter().product();
        let end = t.len.checked_mul(4).and_then(|b| b.checked_add(t.offset));
        if elems != t.len || end.is_none_or(|end| end > blob.len()) {
            return Err(format_err(
                "tensors",
                format!("`{}` (shape {:?}, {} values at byte {}) does not fit the blob", t.name, t.shape, t.len, t.offset),
            ));
        }
        spans.push((t.offset, t.offset + 4 * t.len, &t.name));
        let data = blob[t.offset..t.offset + 4 * t.len]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")))
            .collect();
        weights.insert(t.name.clone(), Tensor::new(t.shape.clone(), data)?, t.trainable)?;
    }
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(format_err("tensors", format!("`{}` overlaps `{}`", w[1].2, w[0].2)));
        }
    }
    Ok((manifest, weights))
}

/// Rebuilds the stored network, checking the tensors against its
/// architecture.
pub fn decode_network(bytes: &[u8]) -> Result<Network<f32>> {
    let (manifest, weights) = decode_weights(bytes)?;
    Network::from_weights(manifest.architecture, weights)
}

/// Like [`decode_network`] but refuses any architecture other than
/// `expected`.
pub fn decode_network_as(bytes: &[u8], expected: &Architecture) -> Result<Network<f32>> {
    let (manifest, weights) = decode_weights(bytes)?;
    let want = expected.fingerprint();
    if manifest.fingerprint != want {
        return Err(Error::Fingerprint {
            expected: want,
            found: manifest.fingerprint,
        });
    }
    Network::from_weights(expected.clone(), weights)
}

pub fn save_weights(path: impl AsRef<Path>, net: &Network<f32>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_weights(net)?).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let path = path.as_ref();
    decode_network(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn load_network_as(path: impl AsRef<Path>, expected: &Architecture) -> Result<Network<f32>> {
    let path = path.as_ref();
    decode_network_as(&std::fs::read(path).map_err(|e| Error::io(path, e))?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_restores_every_tensor() {
        let net = Network::<f32>::sslc_ae(5).unwrap();
        let bytes = encode_weights(&net).unwrap();
        let back = decode_network(&bytes).unwrap();
        assert_eq!(back.weights(), net.weights());
        assert_eq!(encode_weights(&back).unwrap(), bytes);
    }

    #[test]
    fn manifest_lists_each_tensor_once() {
        let net = Network::<f32>::erpenet(1).unwrap();
        let (manifest, _) = decode_weights(&encode_weights(&net).unwrap()).unwrap();
        let names: Vec<&str> = manifest.tensors.iter().map(|t| t.name.as_str()).collect();
        let expected: Vec<&str> = net.weights().names().collect();
        assert_eq!(names, expected);
        let trainable = manifest.tensors.iter().filter(|t| t.trainable).count();
        assert_eq!(trainable, net.weights().iter().filter(|(_, e)| e.trainable).count());
    }

    #[test]
    fn wrong_family_is_a_fingerprint_error() {
        let bytes = encode_weights(&Network::<f32>::erpenet(0).unwrap()).unwrap();
        match decode_network_as(&bytes, &Architecture::sslc_ae()) {
            Err(Error::Fingerprint { expected, found }) => {
                assert_eq!(expected, Architecture::sslc_ae().fingerprint());
                assert_eq!(found, Architecture::erpenet().fingerprint());
            }
            other => panic!("expected a fingerprint error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_weights(&Network::<f32>::sslc_ae(2).unwrap()).unwrap();
        let mut b = bytes.clone();
        let last = b.len() - 1;
        b[last] ^= 1;
        assert!(matches!(decode_weights(&b), Err(Error::Format { field: "checksum", .. })));
        assert!(matches!(decode_weights(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        let mut b = bytes;
        b[1] = b'X';
        assert!(matches!(decode_weights(&b), Err(Error::Format { field: "magic", .. })));
    }
}
