use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Layout, ListenerNet};

const MAGIC: &[u8; 8] = b"HGBILSTM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 3;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint checksum mismatch (file truncated or corrupted)")]
    ChecksumMismatch,
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("not a listener checkpoint")]
    BadMagic,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ListenerNet {
    /// Binary checkpoint: magic, format version, hidden size, input size,
    /// parameters as little-endian f64, then a SHA-256 of everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.params.len() + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layout.hidden as u32).to_le_bytes());
        out.extend_from_slice(&(self.layout.input as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        Self::decode(bytes, None)
    }

    /// Decodes a checkpoint that must have the given hidden size.
    pub fn from_bytes_expecting(bytes: &[u8], hidden: usize) -> Result<Self, CheckpointError> {
        Self::decode(bytes, Some(hidden))
    }

    fn decode(bytes: &[u8], expected_hidden: Option<usize>) -> Result<Self, CheckpointError> {
        if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
            return Err(CheckpointError::ChecksumMismatch);
        }
        let (body, digest) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::ChecksumMismatch);
        }
        if &body[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let word = |i: usize| u32::from_le_bytes(body[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        let version = word(0);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let layout = Layout {
            hidden: word(1) as usize,
            input: word(2) as usize,
        };
        let found = format!("hidden={} input={}", layout.hidden, layout.input);
        if let Some(h) = expected_hidden {
            if h != layout.hidden {
                return Err(CheckpointError::VersionMismatch(format!(
                    "declared hidden={h} input={}, found {found}",
                    crate::abc::pitch::PIANO_KEYS
                )));
            }
        }
        if layout.input != crate::abc::pitch::PIANO_KEYS {
            return Err(CheckpointError::VersionMismatch(format!(
                "declared input={}, found {found}",
                crate::abc::pitch::PIANO_KEYS
            )));
        }
        let data = &body[HEADER_LEN..];
        if data.len() != 8 * layout.len() {
            return Err(CheckpointError::VersionMismatch(format!(
                "{found} needs {} parameters, file holds {}",
                layout.len(),
                data.len() / 8
            )));
        }
        let params = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(ListenerNet { layout, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn load_expecting(path: impl AsRef<Path>, hidden: usize) -> Result<Self, CheckpointError> {
        Self::from_bytes_expecting(&std::fs::read(path)?, hidden)
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.to_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
