//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SPXM"              4-byte magic
//! u32  version        currently 1
//! u32  config length  byte count of the UTF-8 config text that follows
//! ...                 config text, the canonical flat form
//! f64  values         every parameter tensor in canonical layer order,
//!                     running statistics included
//! ```
//!
//! Round trips are bit-exact: values are stored as raw f64 bits, and the
//! config text is the canonical serialization, which parses back to an equal
//! config.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{param_template, same_structure, ModelConfig, Params};

const MAGIC: &[u8; 4] = b"SPXM";
const VERSION: u32 = 1;

pub fn save_model(path: &Path, cfg: &ModelConfig, params: &Params) -> Result<()> {
    cfg.validate()?;
    let template = param_template(cfg)?;
    if !same_structure(params, &template) {
        return Err(Error::shape("parameters do not match the model config"));
    }
    let text = cfg.to_text();
    let mut bytes = Vec::with_capacity(12 + text.len() + 8 * params.count());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(text.len() as u32).to_le_bytes());
    bytes.extend_from_slice(text.as_bytes());
    params.visit(&mut |t| {
        for &v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    });
    std::fs::write(path, bytes).map_err(|source| Error::Io { path: path.into(), source })
}

pub fn load_model(path: &Path) -> Result<(ModelConfig, Params)> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.into(), source })?;
    let fail = |detail: String| Error::Format { path: path.into(), detail };
    if bytes.len() < 12 {
        return Err(fail(format!("file is {} bytes, too short for a header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("bad magic, not a model checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}, this build reads {VERSION}")));
    }
    let cfg_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cfg_end = 12usize.checked_add(cfg_len).ok_or_else(|| fail("config length overflows".into()))?;
    if bytes.len() < cfg_end {
        return Err(fail("truncated before the end of the config text".into()));
    }
    let text = std::str::from_utf8(&bytes[12..cfg_end])
        .map_err(|_| fail("config text is not valid UTF-8".into()))?;
    let cfg = crate::net::parse_config(text)
        .map_err(|e| fail(format!("embedded config is invalid: {e}")))?;
    let mut params = param_template(&cfg)?;
    let expected = 8 * params.count();
    let payload = &bytes[cfg_end..];
    if payload.len() != expected {
        return Err(fail(format!(
            "parameter payload is {} bytes, config demands {expected}",
            payload.len()
        )));
    }
    let mut pos = 0;
    params.visit_mut(&mut |t| {
        for v in t.data_mut() {
            *v = f64::from_le_bytes(payload[pos..pos + 8].try_into().unwrap());
            pos += 8;
        }
    });
    Ok((cfg, params))
}
