//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LPCM"  u32 version  u64 config_len  config TOML bytes
//! u64 entry_count
//! per entry: u32 name_len  name  u32 rank  u64 dims[rank]  f64 data[prod(dims)]
//! ```
//!
//! Trainable flags are not stored; they are rebuilt from the configuration.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use lpcsm_core::model::init_params;
use lpcsm_core::{ModelConfig, ParameterStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{model_from_toml, model_to_toml};

pub const MAGIC: &[u8; 4] = b"LPCM";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic {found:?})")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint truncated while reading {what}")]
    Truncated { what: &'static str },
    #[error("checkpoint config mismatch in `{field}`: expected {expected}, found {found}")]
    ConfigMismatch {
        field: String,
        expected: String,
        found: String,
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

pub fn encode(store: &ParameterStore, cfg: &ModelConfig) -> Vec<u8> {
    let text = model_to_toml(cfg);
    let mut out = Vec::with_capacity(16 + text.len() + 8 * store.num_values() + 64 * store.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for entry in store.iter() {
        out.extend_from_slice(&(entry.name.len() as u32).to_le_bytes());
        out.extend_from_slice(entry.name.as_bytes());
        let shape = entry.tensor.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in entry.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Truncated { what });
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &'static str) -> Result<usize> {
        let n = self.u64(what)?;
        usize::try_from(n).map_err(|_| CheckpointError::Malformed(format!("{what} {n} overflows")))
    }
}

/// Parameters and configuration from checkpoint bytes.
pub fn decode(bytes: &[u8]) -> Result<(ParameterStore, ModelConfig)> {
    let mut r = Reader { bytes };
    let magic = r.take(4, "magic").map_err(|_| CheckpointError::BadMagic { found: bytes.to_vec() })?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { found: magic.to_vec() });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    let config_len = r.len("config length")?;
    let text = std::str::from_utf8(r.take(config_len, "config")?)
        .map_err(|e| CheckpointError::Malformed(format!("config is not UTF-8: {e}")))?;
    let cfg = model_from_toml(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;

    // The reference layout supplies names, order and trainable flags.
    let reference = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let count = r.len("entry count")?;
    if count != reference.len() {
        return Err(CheckpointError::Malformed(format!(
            "{count} entries but the config defines {}",
            reference.len()
        )));
    }
    let mut store = ParameterStore::new();
    for expected in reference.iter() {
        let name_len = r.u32("entry name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "entry name")?)
            .map_err(|e| CheckpointError::Malformed(format!("entry name is not UTF-8: {e}")))?;
        if name != expected.name {
            return Err(CheckpointError::Malformed(format!(
                "entry `{name}` where `{}` was expected",
                expected.name
            )));
        }
        let rank = r.u32("entry rank")? as usize;
        let shape = (0..rank).map(|_| r.len("entry dims")).collect::<Result<Vec<_>>>()?;
        if shape != expected.tensor.shape() {
            return Err(CheckpointError::Malformed(format!(
                "`{name}` has shape {shape:?}, expected {:?}",
                expected.tensor.shape()
            )));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(8 * n, "entry data")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        store
            .insert(name, tensor, expected.trainable)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    }
    if !r.bytes.is_empty() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", r.bytes.len())));
    }
    Ok((store, cfg))
}

pub fn save_checkpoint(store: &ParameterStore, cfg: &ModelConfig, path: &Path) -> Result<()> {
    fs::write(path, encode(store, cfg)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterStore, ModelConfig)> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

/// Error if `found` differs from `expected` in width, depth or toggles.
pub fn check_compatible(expected: &ModelConfig, found: &ModelConfig) -> Result<()> {
    let mismatch = |field: &str, e: String, f: String| CheckpointError::ConfigMismatch {
        field: field.to_string(),
        expected: e,
        found: f,
    };
    if expected.width != found.width {
        return Err(mismatch("width", expected.width.to_string(), found.width.to_string()));
    }
    if expected.layers != found.layers {
        return Err(mismatch("layers", expected.layers.to_string(), found.layers.to_string()));
    }
    for name in lpcsm_core::Toggles::NAMES {
        let (e, f) = (expected.toggles.get(name), found.toggles.get(name));
        if e != f {
            return Err(mismatch(
                &format!("toggles.{name}"),
                format!("{}", e.unwrap_or_default()),
                format!("{}", f.unwrap_or_default()),
            ));
        }
    }
    Ok(())
}

/// Load a checkpoint that must be compatible with `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<(ParameterStore, ModelConfig)> {
    let (store, cfg) = load_checkpoint(path)?;
    check_compatible(expected, &cfg)?;
    Ok((store, cfg))
}
