//! Binary parameter checkpoints: `DF3C`, u16 version, u32 header length,
//! JSON header, then little-endian f32 payload in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::float::Float;
use crate::params::ParamStore;

const MAGIC: &[u8; 4] = b"DF3C";
const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("header json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    params: Vec<Entry>,
    meta: serde_json::Value,
}

/// Writes all parameters plus free-form metadata. The file is written to a
/// temporary sibling and renamed into place.
pub fn save<T: Float>(
    store: &ParamStore<T>,
    meta: serde_json::Value,
    path: &Path,
) -> Result<(), CheckpointError> {
    let header = Header {
        params: store
            .iter()
            .map(|(_, p)| Entry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        meta,
    };
    let hjson = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(10 + hjson.len() + 4 * store.num_scalars());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(hjson.len() as u32).to_le_bytes());
    buf.extend_from_slice(&hjson);
    for (_, p) in store.iter() {
        for v in p.value.data() {
            buf.extend_from_slice(&(v.to_f64c() as f32).to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub type Named<T> = Vec<(String, Array<T>)>;

/// Reads a checkpoint as (name, array) pairs plus metadata.
pub fn read<T: Float>(path: &Path) -> Result<(Named<T>, serde_json::Value), CheckpointError> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| CheckpointError::Format(m.to_string());
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let hend = 10 + hlen;
    if bytes.len() < hend {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[10..hend])?;
    let total: usize = header
        .params
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    if bytes.len() != hend + 4 * total {
        return Err(CheckpointError::Format(format!(
            "payload size {} != {}",
            bytes.len() - hend,
            4 * total
        )));
    }
    let mut off = hend;
    let mut out = Vec::with_capacity(header.params.len());
    for e in header.params {
        let n: usize = e.shape.iter().product();
        let data = bytes[off..off + 4 * n]
            .chunks_exact(4)
            .map(|c| T::from_f64c(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        off += 4 * n;
        out.push((e.name, Array::from_vec(&e.shape, data)));
    }
    Ok((out, header.meta))
}

/// Loads values into an existing store by name. Every store parameter must be present.
pub fn load_into<T: Float>(
    store: &mut ParamStore<T>,
    path: &Path,
) -> Result<serde_json::Value, CheckpointError> {
    let (entries, meta) = read::<T>(path)?;
    let mut seen = 0;
    for (name, arr) in entries {
        let id = store
            .id_of(&name)
            .ok_or_else(|| CheckpointError::Format(format!("unknown parameter {name}")))?;
        if store.get(id).shape() != arr.shape() {
            return Err(CheckpointError::Format(format!(
                "shape mismatch for {name}: {:?} vs {:?}",
                store.get(id).shape(),
                arr.shape()
            )));
        }
        store.set(id, arr);
        seen += 1;
    }
    if seen != store.len() {
        return Err(CheckpointError::Format(format!(
            "checkpoint has {seen} of {} parameters",
            store.len()
        )));
    }
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = std::env::temp_dir().join(format!("df3c-{}", std::process::id()));
        let path = dir.join("a.ckpt");
        let mut s = ParamStore::<f32>::new();
        s.add("a", Array::from_fn(&[2, 3], |i| i as f32 * 0.5));
        s.add("b", Array::from_vec(&[1], vec![-1.25]));
        save(&s, serde_json::json!({"epoch": 3}), &path).unwrap();
        let mut t = ParamStore::<f32>::new();
        t.add("a", Array::zeros(&[2, 3]));
        t.add("b", Array::zeros(&[1]));
        let meta = load_into(&mut t, &path).unwrap();
        assert_eq!(meta["epoch"], 3);
        assert_eq!(s.fingerprint(), t.fingerprint());
        std::fs::write(&path, b"XXXX").unwrap();
        assert!(load_into(&mut t, &path).is_err());
        std::fs::remove_dir_all(dir).ok();
    }
}
