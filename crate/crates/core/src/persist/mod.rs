//! Byte-exact file formats: `.dvol`/`.dmask` volumes, `.ackpt` checkpoints,
//! and the plain-text dataset manifest. Integers and floats are always
//! little-endian regardless of host.

mod checkpoint;
mod manifest;
mod volume;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dosimetry::DosimetryError;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use manifest::{Manifest, ManifestEntry, Split};
pub use volume::{
    decode_header, decode_mask, decode_volume, encode_mask, encode_volume, read_mask, read_volume, write_mask, write_volume, Dtype,
    VolumeHeader, VOLUME_MAGIC,
};

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic")]
    BadMagic,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated body: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{extra} trailing bytes after body")]
    TrailingBytes { extra: usize },
    #[error("dtype mismatch: expected {expected}, header declares {found}")]
    DtypeMismatch { expected: &'static str, found: &'static str },
    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("duplicate tensor `{0}`")]
    DuplicateTensor(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Volume(#[from] DosimetryError),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, PersistError> {
    std::fs::read(path).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
    std::fs::write(path, bytes).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })
}
