//! Binary dataset file.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "ERPE"
//! 4       2           format version (u16)
//! 6       4           epoch count n (u32)
//! 10      2 × 3       time steps, grid rows, grid cols (u16 each)
//! 16      6           electrode mask, 45 bits, cell i in byte i/8 bit i%8
//! 22      2 + len     dataset id (u16 length, UTF-8)
//! ..      n           labels, one byte each (0 unattended, 1 attended)
//! ..      4 × n·4500  grid values, f32, epoch-major then time-major
//! ..      4           CRC-32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{GridEpoch, GridMask, Label, EPOCH_STEPS, EPOCH_VALUES, GRID_CELLS, GRID_COLS, GRID_ROWS};

pub const DATASET_MAGIC: [u8; 4] = *b"ERPE";
pub const DATASET_VERSION: u16 = 1;
const MASK_BYTES: usize = GRID_CELLS.div_ceil(8);

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn format_err(field: &'static str, reason: String) -> Error {
    Error::Format { field, reason }
}

/// Serializes epochs that share one dataset id and mask.
pub fn encode_dataset(epochs: &[GridEpoch]) -> Result<Vec<u8>> {
    let first = epochs
        .first()
        .ok_or_else(|| Error::Contract("a dataset file needs at least one epoch".into()))?;
    for e in epochs {
        e.validate()?;
        if e.dataset_id != first.dataset_id || e.mask != first.mask {
            return Err(Error::Contract("all epochs of a dataset file share one dataset id and mask".into()));
        }
    }
    let id = first.dataset_id.as_bytes();
    let id_len = u16::try_from(id.len()).map_err(|_| format_err("dataset_id", "longer than 65535 bytes".into()))?;
    let n = u32::try_from(epochs.len()).map_err(|_| format_err("n_epochs", "more than u32::MAX epochs".into()))?;

    let mut out = Vec::with_capacity(32 + id.len() + epochs.len() * (1 + 4 * EPOCH_VALUES));
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    for d in [EPOCH_STEPS, GRID_ROWS, GRID_COLS] {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    let mut mask = [0u8; MASK_BYTES];
    for (i, &set) in first.mask.cells().iter().enumerate() {
        if set {
            mask[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&mask);
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id);
    out.extend(epochs.iter().map(|e| e.label as u8));
    for e in epochs {
        for v in &e.grid {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<GridEpoch>> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    if magic != DATASET_MAGIC {
        return Err(format_err("magic", format!("expected \"ERPE\", found {magic:?}")));
    }
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(format_err("version", format!("expected {DATASET_VERSION}, found {version}")));
    }
    let n = r.u32()? as usize;
    let dims = [r.u16()? as usize, r.u16()? as usize, r.u16()? as usize];
    if dims != [EPOCH_STEPS, GRID_ROWS, GRID_COLS] {
        return Err(format_err(
            "dimensions",
            format!("expected {EPOCH_STEPS}×{GRID_ROWS}×{GRID_COLS}, found {}×{}×{}", dims[0], dims[1], dims[2]),
        ));
    }
    let bits = r.take(MASK_BYTES)?;
    let mut cells = [false; GRID_CELLS];
    for (i, c) in cells.iter_mut().enumerate() {
        *c = bits[i / 8] & (1 << (i % 8)) != 0;
    }
    let mask = GridMask::from_cells(cells);
    mask.validate()?;
    let id_len = r.u16()? as usize;
    let dataset_id = std::str::from_utf8(r.take(id_len)?)
        .map_err(|e| format_err("dataset_id", e.to_string()))?
        .to_string();
    let labels = r
        .take(n)?
        .iter()
        .map(|&b| Label::from_bit(b))
        .collect::<Result<Vec<_>>>()?;
    let payload_len = n
        .checked_mul(EPOCH_VALUES * 4)
        .ok_or_else(|| format_err("n_epochs", format!("{n} epochs overflow the payload size")))?;
    let payload = r.take(payload_len)?;
    let body_len = r.pos();
    let stored = r.u32()?;
    if r.remaining() != 0 {
        return Err(format_err("trailer", format!("{} unexpected bytes after the checksum", r.remaining())));
    }
    let actual = crc32fast::hash(&bytes[..body_len]);
    if stored != actual {
        return Err(format_err("checksum", format!("stored {stored:08x}, computed {actual:08x}")));
    }
    let epochs = labels
        .into_iter()
        .zip(payload.chunks_exact(EPOCH_VALUES * 4))
        .map(|(label, raw)| {
            let grid: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")))
                .collect();
            let e = GridEpoch {
                grid,
                mask,
                label,
                dataset_id: dataset_id.clone(),
            };
            e.validate()?;
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(epochs)
}

pub fn save_dataset(path: impl AsRef<Path>, epochs: &[GridEpoch]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_dataset(epochs)?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<GridEpoch>> {
    let path = path.as_ref();
    decode_dataset(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
