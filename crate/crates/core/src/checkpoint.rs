//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"TPIDM\0"        magic
//! u16               format version
//! u32 + bytes       metadata as UTF-8 JSON
//! u64 + f32 * n     parameter blob in declared layer order
//! u64               FNV-1a 64 hash of the blob bytes
//! ```
//!
//! Parameters are trained in f64 and rounded to f32 on save. That rounding
//! is the only precision loss anywhere in the pipeline.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::data::ScaleParams;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"TPIDM\0";
pub const VERSION: u16 = 1;

/// Which model the parameter blob belongs to.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Diffusion,
    Autoencoder,
    Variational,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    /// The experiment config as TOML text.
    pub config: String,
    pub steps: u64,
    pub seed: u64,
    pub channels: usize,
    pub names: Vec<String>,
    pub scale: ScaleParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<f32>,
}

/// Rounds each parameter to the nearest f32.
pub fn round_params(params: &[f64]) -> Vec<f32> {
    params.iter().map(|&v| v as f32).collect()
}

fn blob_hash(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_string(&self.meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(32 + meta.len() + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        let blob_start = out.len();
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let hash = blob_hash(&out[blob_start..]);
        out.extend_from_slice(&hash.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rest = bytes;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if rest.len() < n {
                return Err(corrupt(format!("truncated while reading {what}")));
            }
            let (head, tail) = rest.split_at(n);
            rest = tail;
            Ok(head)
        };
        if take(6, "magic")? != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u16::from_le_bytes(take(2, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let meta_len = u32::from_le_bytes(take(4, "metadata length")?.try_into().unwrap()) as usize;
        let meta_text = std::str::from_utf8(take(meta_len, "metadata")?)
            .map_err(|_| corrupt("metadata is not UTF-8"))?;
        let meta: CheckpointMeta =
            serde_json::from_str(meta_text).map_err(|e| corrupt(format!("metadata: {e}")))?;
        let count = u64::from_le_bytes(take(8, "parameter count")?.try_into().unwrap());
        let blob_len = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| corrupt("parameter count overflows"))?;
        let blob = take(blob_len, "parameters")?;
        let stored = u64::from_le_bytes(take(8, "checksum")?.try_into().unwrap());
        if !rest.is_empty() {
            return Err(corrupt(format!("{} trailing bytes", rest.len())));
        }
        if blob_hash(blob) != stored {
            return Err(corrupt("parameter checksum mismatch"));
        }
        let params = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn params_f64(&self) -> Vec<f64> {
        self.params.iter().map(|&v| v as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                kind: ModelKind::Diffusion,
                config: "[model]\nsteps = 100\n".into(),
                steps: 42,
                seed: 7,
                channels: 2,
                names: vec!["prey".into(), "predator".into()],
                scale: ScaleParams::identity(2),
            },
            params: vec![0.5, -1.25, 3.0e-7, f32::MAX],
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..6], MAGIC);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn flipped_blob_bit_fails_checksum() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 10] ^= 1;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(
            matches!(err, Error::CorruptCheckpoint(ref m) if m.contains("checksum")),
            "{err}"
        );
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn header_damage_is_detected() {
        let good = sample().to_bytes();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad_magic).is_err());
        let mut bad_version = good.clone();
        bad_version[6] = 9;
        assert!(Checkpoint::from_bytes(&bad_version).is_err());
        assert!(Checkpoint::from_bytes(&good[..good.len() - 3]).is_err());
        let mut longer = good;
        longer.push(0);
        assert!(Checkpoint::from_bytes(&longer).is_err());
    }

    #[test]
    fn rounding_is_nearest_f32() {
        assert_eq!(round_params(&[0.1]), vec![0.1f32]);
    }
}
