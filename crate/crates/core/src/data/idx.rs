//! IDX image and label files.
//!
//! The classic big-endian container: a magic word whose low byte counts the
//! dimensions, one u32 per dimension, then the payload as raw u8. Images are
//! `0x00000803` with dims `[n, height, width]`; labels are `0x00000801` with
//! dims `[n]`. Pixels map to `[0,1]` by dividing by 255; writing rounds
//! `value * 255` to the nearest integer, so a read-write round trip of any
//! IDX file reproduces it byte for byte.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads an IDX image file into single-channel `[1, H, W]` tensors scaled
/// to `[0,1]`.
pub fn read_idx_images(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.into(), source })?;
    let fail = |detail: String| Error::Format { path: path.into(), detail };
    let (magic, dims, payload) = split_idx(&bytes).map_err(&fail)?;
    if magic != IMAGES_MAGIC {
        return Err(fail(format!("magic {magic:#010x} is not an image file")));
    }
    let [n, h, w] = dims[..] else {
        return Err(fail(format!("image file has {} dims, expected 3", dims.len())));
    };
    let (n, h, w) = (n as usize, h as usize, w as usize);
    let expect = n
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .ok_or_else(|| fail("dimension product overflows".into()))?;
    if payload.len() != expect {
        return Err(fail(format!("payload is {} bytes, header demands {expect}", payload.len())));
    }
    if h == 0 || w == 0 {
        return Err(fail("zero-sized images".into()));
    }
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let plane = &payload[i * h * w..(i + 1) * h * w];
        images.push(Tensor::from_fn(&[1, h, w], |j| plane[j] as f64 / 255.0));
    }
    Ok(images)
}

/// Writes `[1, H, W]` tensors as an IDX image file, quantizing each pixel to
/// `round(clamp(v, 0, 1) * 255)`.
pub fn write_idx_images(path: &Path, images: &[Tensor]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::domain("no images to write"));
    }
    let [c, h, w] = images[0].shape() else {
        return Err(Error::shape(format!(
            "images must be [1,H,W], got {:?}",
            images[0].shape()
        )));
    };
    let (c, h, w) = (*c, *h, *w);
    if c != 1 {
        return Err(Error::shape(format!("only single-channel images fit this format, got {c}")));
    }
    let mut bytes = Vec::with_capacity(16 + images.len() * h * w);
    bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(h as u32).to_be_bytes());
    bytes.extend_from_slice(&(w as u32).to_be_bytes());
    for img in images {
        if img.shape() != [1, h, w] {
            return Err(Error::shape("images have mixed shapes"));
        }
        for &v in img.data() {
            bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::write(path, bytes).map_err(|source| Error::Io { path: path.into(), source })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.into(), source })?;
    let fail = |detail: String| Error::Format { path: path.into(), detail };
    let (magic, dims, payload) = split_idx(&bytes).map_err(&fail)?;
    if magic != LABELS_MAGIC {
        return Err(fail(format!("magic {magic:#010x} is not a label file")));
    }
    let [n] = dims[..] else {
        return Err(fail(format!("label file has {} dims, expected 1", dims.len())));
    };
    if payload.len() != n as usize {
        return Err(fail(format!(
            "payload is {} bytes, header demands {n}",
            payload.len()
        )));
    }
    Ok(payload.iter().map(|&b| b as usize).collect())
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::domain("no labels to write"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 255) {
        return Err(Error::domain(format!("label {bad} does not fit in a byte")));
    }
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend(labels.iter().map(|&l| l as u8));
    std::fs::write(path, bytes).map_err(|source| Error::Io { path: path.into(), source })
}

/// Splits a raw IDX byte stream into magic, dimension sizes, and payload.
/// The dimension count comes from the magic's low byte.
fn split_idx(bytes: &[u8]) -> std::result::Result<(u32, Vec<u32>, &[u8]), String> {
    if bytes.len() < 4 {
        return Err(format!("file is {} bytes, too short for a magic word", bytes.len()));
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let ndims = (magic & 0xFF) as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(format!("truncated header: {} bytes for {ndims} dims", bytes.len()));
    }
    let dims: Vec<u32> = (0..ndims)
        .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().unwrap()))
        .collect();
    Ok((magic, dims, &bytes[header..]))
}
