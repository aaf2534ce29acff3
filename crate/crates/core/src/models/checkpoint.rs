//! Self-describing checkpoint files.
//!
//! Layout: the 8-byte magic `PFCKPT01`, a little-endian `u64` header
//! length, a JSON header, then every tensor as little-endian `f32` in header
//! order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"PFCKPT01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Coarse,
    Fine,
    Fusion,
}

impl std::fmt::Display for NetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NetKind::Coarse => "coarse",
            NetKind::Fine => "fine",
            NetKind::Fusion => "fusion",
        })
    }
}

/// Position of a ChaCha8 stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Format(format!("invalid rng state {self:?}"));
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: String,
    kind: NetKind,
    config: ModelConfig,
    config_hash: String,
    step: usize,
    rng_state: Option<RngState>,
    tensors: Vec<TensorEntry>,
}

/// Trained parameters of one network plus the metadata needed to use them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: NetKind,
    pub config: ModelConfig,
    pub params: ParamSet<f32>,
    pub step: usize,
    pub rng_state: Option<RngState>,
    pub version: String,
}

impl Checkpoint {
    pub fn new(kind: NetKind, config: ModelConfig, params: ParamSet<f32>) -> Self {
        Self {
            kind,
            config,
            params,
            step: 0,
            rng_state: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: self.version.clone(),
            kind: self.kind,
            config: self.config.clone(),
            config_hash: self.config.hash(),
            step: self.step,
            rng_state: self.rng_state.clone(),
            tensors: self
                .params
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated"))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&r[..len])?;
        if header.config_hash != header.config.hash() {
            return Err(bad("config hash mismatch"));
        }
        let mut data = &r[len..];
        let mut params = ParamSet::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            if data.len() < 4 * n {
                return Err(bad("truncated tensor data"));
            }
            let vals: Vec<f32> = data[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            data = &data[4 * n..];
            params.insert(e.name, Tensor::from_vec(&e.shape, vals)?);
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            params,
            step: header.step,
            rng_state: header.rng_state,
            version: header.version,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
