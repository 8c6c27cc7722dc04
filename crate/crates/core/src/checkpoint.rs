//! Binary actor checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "QLABCKPT"
//! version      u32
//! header_len   u32
//! header       header_len bytes of JSON (CheckpointHeader)
//! param_count  u64
//! params       param_count × f32
//! crc32        u32 over every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::CheckpointError;
use crate::nn::{Activation, Mlp};

pub const MAGIC: &[u8; 8] = b"QLABCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl Architecture {
    pub fn of(net: &Mlp<f32>) -> Self {
        Self {
            sizes: net.sizes().to_vec(),
            hidden_activation: net.hidden_activation(),
            output_activation: net.output_activation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub env: EnvConfig,
    pub global_step: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub actor: Mlp<f32>,
}

impl Checkpoint {
    pub fn new(actor: Mlp<f32>, env: EnvConfig, global_step: u64, seed: u64) -> Self {
        Self {
            header: CheckpointHeader {
                architecture: Architecture::of(&actor),
                env,
                global_step,
                seed,
            },
            actor,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let params = self.actor.params();
        let mut out = Vec::with_capacity(8 + 4 + 4 + header.len() + 8 + 4 * params.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
        let count = r.u64()?;
        let count = usize::try_from(count).map_err(|_| CheckpointError::Corrupt("parameter count overflows".into()))?;
        let raw = r.take(count.checked_mul(4).ok_or_else(|| CheckpointError::Corrupt("parameter count overflows".into()))?)?;
        let body_end = r.pos;
        let crc = r.u32()?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if crc32fast::hash(&bytes[..body_end]) != crc {
            return Err(CheckpointError::Corrupt("checksum mismatch".into()));
        }
        let params: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let arch = &header.architecture;
        let actor = Mlp::from_params(&arch.sizes, arch.hidden_activation, arch.output_activation, params)
            .map_err(|e| CheckpointError::Architecture(e.to_string()))?;
        Ok(Self { header, actor })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Fails unless the stored network accepts `actor_dim` inputs and emits
    /// `action_dim` outputs.
    pub fn check_dims(&self, actor_dim: usize, action_dim: usize) -> Result<(), CheckpointError> {
        let (i, o) = (self.actor.input_dim(), self.actor.output_dim());
        if i != actor_dim || o != action_dim {
            return Err(CheckpointError::Architecture(format!(
                "network maps {i} -> {o}, environment needs {actor_dim} -> {action_dim}"
            )));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Corrupt("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
