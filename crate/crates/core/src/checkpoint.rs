//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `DLVMCCKP`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then the
//! data of every array as little-endian `f64` in header order. Floats live
//! only in the binary payload, so round trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::RngState;

pub const MAGIC: &[u8; 8] = b"DLVMCCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub step: u64,
    /// Integer-valued bookkeeping (counters).
    pub counters: Vec<(String, u64)>,
    pub rngs: Vec<RngState>,
    pub arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    step: u64,
    counters: Vec<(String, u64)>,
    rngs: Vec<RngEntry>,
    arrays: Vec<(String, Vec<usize>)>,
}

/// `word_pos` is a `u128`; it is stored as a decimal string.
#[derive(Serialize, Deserialize)]
struct RngEntry {
    seed: [u8; 32],
    stream: u64,
    word_pos: String,
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn counter(&self, name: &str) -> Option<u64> {
        self.counters.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            step: self.step,
            counters: self.counters.clone(),
            rngs: self
                .rngs
                .iter()
                .map(|r| RngEntry { seed: r.seed, stream: r.stream, word_pos: r.word_pos.to_string() })
                .collect(),
            arrays: self.arrays.iter().map(|a| (a.name.clone(), a.shape.clone())).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.arrays.iter().map(|a| a.data.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + len).ok_or("truncated header")?;
        let header: Header = serde_json::from_slice(body).map_err(|e| format!("bad header: {e}"))?;
        let mut off = 20 + len;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for (name, shape) in header.arrays {
            let n: usize = shape.iter().product();
            let raw = bytes.get(off..off + 8 * n).ok_or_else(|| format!("truncated data for `{name}`"))?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            off += 8 * n;
            arrays.push(NamedArray { name, shape, data });
        }
        if off != bytes.len() {
            return Err("trailing bytes after payload".into());
        }
        let rngs = header
            .rngs
            .into_iter()
            .map(|r| {
                let word_pos = r.word_pos.parse().map_err(|_| "bad RNG position".to_string())?;
                Ok(RngState { seed: r.seed, stream: r.stream, word_pos })
            })
            .collect::<std::result::Result<_, String>>()?;
        Ok(Checkpoint { step: header.step, counters: header.counters, rngs, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint { path: path.into(), msg: e.to_string() })?;
        Checkpoint::from_bytes(&bytes).map_err(|msg| Error::Checkpoint { path: path.into(), msg })
    }
}
