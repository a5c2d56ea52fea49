//! Saliency map container.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! "SMAP"           4-byte magic
//! u32  version     currently 1
//! u32  height
//! u32  width
//! u32  method_id   0 vanilla, 1 smoothgrad, 2 intgrad, 3 guidedbp, 4 gradcam
//! u64  seed        the seed the map was produced under
//! f32  values      height * width, row-major
//! ```
//!
//! Values are stored at f32 precision; reading widens losslessly, so a
//! write-read-write cycle is byte-stable.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SMAP";
const VERSION: u32 = 1;
pub const METHOD_COUNT: u32 = 5;

pub fn write_smap(path: &Path, map: &Tensor, method_id: u32, seed: u64) -> Result<()> {
    let [h, w] = map.shape() else {
        return Err(Error::shape(format!("saliency map must be [H,W], got {:?}", map.shape())));
    };
    if method_id >= METHOD_COUNT {
        return Err(Error::domain(format!(
            "method id {method_id} out of range, this format knows 0..{}",
            METHOD_COUNT - 1
        )));
    }
    let mut bytes = Vec::with_capacity(28 + 4 * map.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(*h as u32).to_le_bytes());
    bytes.extend_from_slice(&(*w as u32).to_le_bytes());
    bytes.extend_from_slice(&method_id.to_le_bytes());
    bytes.extend_from_slice(&seed.to_le_bytes());
    for &v in map.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|source| Error::Io { path: path.into(), source })
}

pub fn read_smap(path: &Path) -> Result<(Tensor, u32, u64)> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.into(), source })?;
    let fail = |detail: String| Error::Format { path: path.into(), detail };
    if bytes.len() < 28 {
        return Err(fail(format!("file is {} bytes, too short for a header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("bad magic, not a saliency map".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}, this build reads {VERSION}")));
    }
    let h = word(8) as usize;
    let w = word(12) as usize;
    let method_id = word(16);
    if method_id >= METHOD_COUNT {
        return Err(fail(format!("unknown method id {method_id}")));
    }
    let seed = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    if h == 0 || w == 0 {
        return Err(fail("zero-sized map".into()));
    }
    let expect = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| fail("dimension product overflows".into()))?;
    let payload = &bytes[28..];
    if payload.len() != expect {
        return Err(fail(format!("payload is {} bytes, header demands {expect}", payload.len())));
    }
    let map = Tensor::from_fn(&[h, w], |j| {
        f32::from_le_bytes(payload[4 * j..4 * j + 4].try_into().unwrap()) as f64
    });
    Ok((map, method_id, seed))
}
