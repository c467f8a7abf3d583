//! The IDX container used by the MNIST distribution.
//!
//! Images: magic `0x00000803`, then image count, rows and columns as
//! big-endian `u32`, then `count·rows·cols` unsigned bytes in row-major order.
//! Labels: magic `0x00000801`, the count, then one byte per label.
//! Either file may be gzip-compressed.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw image tensor of shape `count × rows × cols`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, index: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[index * size..(index + 1) * size]
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::file(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx("truncated header".into()))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Idx(format!(
            "magic {magic:#010x}, expected {expected:#010x}"
        )));
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Idx(format!("dimensions {count}x{rows}x{cols} overflow")))?;
    let payload = &bytes[16..];
    if payload.len() < size {
        return Err(Error::Idx(format!(
            "truncated payload: {} of {size} pixel bytes",
            payload.len()
        )));
    }
    if payload.len() > size {
        return Err(Error::Idx(format!(
            "{} trailing bytes after {size} pixel bytes",
            payload.len() - size
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: payload.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::Idx(format!(
            "header announces {count} labels, payload has {}",
            payload.len()
        )));
    }
    if let Some(pos) = payload.iter().position(|&l| l > 9) {
        return Err(Error::Idx(format!(
            "label {} at index {pos} is outside 0..=9",
            payload[pos]
        )));
    }
    Ok(payload.to_vec())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    parse_idx_images(&read_maybe_gz(path.as_ref())?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&read_maybe_gz(path.as_ref())?)
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IMAGE_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
