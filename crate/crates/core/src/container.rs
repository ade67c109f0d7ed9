//! Binary tensor container.
//!
//! Layout (little-endian): `DF3D`, u16 version, u8 dtype (0 = u8, 1 = f32),
//! 3 x u32 dims, 3 x f64 origin, f64 delta, row-major payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::grid::{EnvironmentTensor, GridSpec, LosTensor, RadioMapTensor, TransmitterTensor};

pub const MAGIC: &[u8; 4] = b"DF3D";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 12 + 24 + 8;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub grid: GridSpec,
    pub payload: Payload,
}

impl Container {
    pub fn encode(&self) -> Vec<u8> {
        let (code, n) = match &self.payload {
            Payload::U8(v) => (0u8, v.len()),
            Payload::F32(v) => (1u8, v.len() * 4),
        };
        let mut buf = Vec::with_capacity(HEADER_LEN + n);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(code);
        for d in self.grid.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for o in self.grid.origin {
            buf.extend_from_slice(&o.to_le_bytes());
        }
        buf.extend_from_slice(&self.grid.delta.to_le_bytes());
        match &self.payload {
            Payload::U8(v) => buf.extend_from_slice(v),
            Payload::F32(v) => v
                .iter()
                .for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
        buf
    }

    /// Parses and validates; `path` is only used for error messages.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: String| CoreError::format(path, m);
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic, not a DF3D container".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let code = bytes[6];
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let dims = [u32_at(7), u32_at(11), u32_at(15)];
        let origin = [f64_at(19), f64_at(27), f64_at(35)];
        let delta = f64_at(43);
        let grid = GridSpec::new(origin, delta, dims).map_err(|e| bad(e.to_string()))?;
        let body = &bytes[HEADER_LEN..];
        let n = grid.len();
        let payload = match code {
            0 if body.len() == n => Payload::U8(body.to_vec()),
            1 if body.len() == 4 * n => Payload::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            0 | 1 => {
                return Err(bad(format!(
                    "payload has {} bytes for {n} voxels",
                    body.len()
                )))
            }
            c => return Err(bad(format!("unknown dtype code {c}"))),
        };
        Ok(Self { grid, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::decode(&bytes, path)
    }

    fn into_u8(self, path: &Path) -> Result<(GridSpec, Vec<u8>)> {
        match self.payload {
            Payload::U8(v) => Ok((self.grid, v)),
            Payload::F32(_) => Err(CoreError::format(path, "expected u8 payload")),
        }
    }
}

/// Write to a temporary sibling, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CoreError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
}

pub fn write_env(env: &EnvironmentTensor, path: &Path) -> Result<()> {
    Container {
        grid: env.grid,
        payload: Payload::U8(env.data.clone()),
    }
    .write(path)
}

pub fn read_env(path: &Path) -> Result<EnvironmentTensor> {
    let (grid, data) = Container::read(path)?.into_u8(path)?;
    EnvironmentTensor::new(grid, data).map_err(|e| CoreError::format(path, e.to_string()))
}

pub fn write_los(los: &LosTensor, path: &Path) -> Result<()> {
    Container {
        grid: los.grid,
        payload: Payload::U8(los.data.clone()),
    }
    .write(path)
}

pub fn write_tx(tx: &TransmitterTensor, path: &Path) -> Result<()> {
    Container {
        grid: tx.grid,
        payload: Payload::U8(tx.data.clone()),
    }
    .write(path)
}

/// The container does not carry the continuous location, so it is supplied.
pub fn read_tx(path: &Path, location: [f64; 3]) -> Result<TransmitterTensor> {
    let (grid, data) = Container::read(path)?.into_u8(path)?;
    TransmitterTensor::new(grid, data, location).map_err(|e| CoreError::format(path, e.to_string()))
}

pub fn write_map(rm: &RadioMapTensor, path: &Path) -> Result<()> {
    Container {
        grid: rm.grid,
        payload: Payload::F32(rm.data.clone()),
    }
    .write(path)
}

pub fn read_map(path: &Path, normalized: bool) -> Result<RadioMapTensor> {
    let c = Container::read(path)?;
    match c.payload {
        Payload::F32(v) => RadioMapTensor::new(c.grid, v, normalized)
            .map_err(|e| CoreError::format(path, e.to_string())),
        Payload::U8(_) => Err(CoreError::format(path, "expected f32 payload")),
    }
}
