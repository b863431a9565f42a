//! Checkpoint container.
//!
//! Layout: `b"BDCK"`, a little-endian `u32` version, a `u64` header length,
//! a JSON header (model config, step, string extras and a tensor table with
//! name, shape and element offset), then every tensor as row-major `f32` LE.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayViewD, ArrayViewMutD};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, Params};
use crate::error::{Error, Result};
use crate::rng;

const MAGIC: &[u8; 4] = b"BDCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    /// Free-form string metadata, e.g. the training config text.
    pub extras: BTreeMap<String, String>,
    pub params: Params<f32>,
    /// AdamW first and second moments.
    pub moments: Option<(Params<f32>, Params<f32>)>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    extras: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

fn named<'a>(ck: &'a Checkpoint) -> Vec<(String, ArrayViewD<'a, f32>)> {
    let mut out = ck.params.tensors();
    if let Some((m, v)) = &ck.moments {
        out.extend(m.tensors().into_iter().map(|(n, t)| (format!("adam.m.{n}"), t)));
        out.extend(v.tensors().into_iter().map(|(n, t)| (format!("adam.v.{n}"), t)));
    }
    out
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let tensors = named(ck);
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, t) in &tensors {
        entries.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
        offset += t.len();
    }
    let header = serde_json::to_vec(&Header {
        config: ck.config.clone(),
        step: ck.step,
        extras: ck.extras.clone(),
        tensors: entries,
    })?;
    let mut buf = Vec::with_capacity(16 + header.len() + 4 * offset);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, t) in &tensors {
        for &x in t.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body])?;
    let payload = &bytes[body..];
    header.config.validate()?;

    let table: BTreeMap<&str, &TensorEntry> = header.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
    let fill = |prefix: &str, target: Vec<(String, ArrayViewMutD<'_, f32>)>| -> Result<bool> {
        let mut found = 0;
        let total = target.len();
        for (name, mut t) in target {
            let key = format!("{prefix}{name}");
            let Some(e) = table.get(key.as_str()) else { continue };
            if e.shape != t.shape() {
                return Err(bad(&format!("{key} has shape {:?}, expected {:?}", e.shape, t.shape())));
            }
            let start = e.offset * 4;
            let end = start + t.len() * 4;
            if end > payload.len() {
                return Err(bad(&format!("{key} runs past the end of the payload")));
            }
            for (x, chunk) in t.iter_mut().zip(payload[start..end].chunks_exact(4)) {
                *x = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            found += 1;
        }
        match found {
            0 if !prefix.is_empty() => Ok(false),
            n if n == total => Ok(true),
            _ => Err(bad(&format!("missing tensors under '{prefix}'"))),
        }
    };

    let mut params = Params::<f32>::init(&header.config, &mut rng::stream(0, "checkpoint", 0));
    fill("", params.tensors_mut())?;
    let mut m = params.zeros_like();
    let mut v = params.zeros_like();
    let has_m = fill("adam.m.", m.tensors_mut())?;
    let has_v = fill("adam.v.", v.tensors_mut())?;
    let moments = match (has_m, has_v) {
        (true, true) => Some((m, v)),
        (false, false) => None,
        _ => return Err(bad("optimizer moments are incomplete")),
    };
    Ok(Checkpoint { config: header.config, step: header.step, extras: header.extras, params, moments })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_moments() {
        let config = ModelConfig::tokens(12, 2, 2, 9, 16).with_coordinates(true);
        let params = Params::<f32>::init(&config, &mut rng::stream(3, "t", 0));
        let mut m = params.clone();
        m.scale(0.5);
        let v = params.zeros_like();
        let mut extras = BTreeMap::new();
        extras.insert("train_config".to_string(), "steps = 4\n".to_string());
        let ck = Checkpoint { config, step: 17, extras, params, moments: Some((m, v)) };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save_checkpoint(&path, &ck).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse(b"nope").is_err());
        assert!(parse(b"BDCK\x02\0\0\0\0\0\0\0\0\0\0\0").is_err());
    }
}
