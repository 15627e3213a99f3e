//! Reader for the IDX binary format (MNIST and friends).

use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// Row-major images scaled to [0, 1].
    pub images: Vec<Vec<f64>>,
}

fn be_u32(bytes: &[u8], off: usize) -> Result<u32> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format(format!("IDX truncated at offset {off}")))
}

/// Parse an unsigned-byte IDX image file (magic 0x00000803).
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("IDX magic {magic:#010x} at offset 0, expected {IMAGES_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let px = rows * cols;
    let need = 16 + count * px;
    if bytes.len() < need {
        return Err(Error::Format(format!("IDX truncated at offset {}: need {need} bytes", bytes.len())));
    }
    let images = (0..count)
        .map(|i| bytes[16 + i * px..16 + (i + 1) * px].iter().map(|&b| b as f64 / 255.0).collect())
        .collect();
    Ok(IdxImages { rows, cols, images })
}

/// Parse an IDX label file (magic 0x00000801).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!("IDX magic {magic:#010x} at offset 0, expected {LABELS_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    bytes
        .get(8..8 + count)
        .map(|b| b.to_vec())
        .ok_or_else(|| Error::Format(format!("IDX truncated at offset {}", bytes.len())))
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxImages> {
    parse_idx_images(&std::fs::read(path)?)
}
