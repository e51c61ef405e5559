//! On-disk formats. Everything is little-endian and float32 on disk, and
//! every writer goes through [`write_atomic`] so a reader never sees a
//! half-written file.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::FormatError;

mod binary;
pub mod checkpoint;
pub mod field;
pub mod json;
pub mod ply;
pub mod pnm;
pub mod tensor;
pub mod truth;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use field::{read_field, write_field};
pub use json::{ingest_external_features, read_cameras, read_manifest, write_cameras, write_manifest, ManifestEntry};
pub use ply::{read_ply, write_ply, PlyScene};
pub use pnm::{write_pgm, write_ppm};
pub use tensor::{read_feature_map, read_tensor, write_feature_map, write_tensor, Tensor};
pub use truth::{read_truth, write_truth};

pub type FormatResult<T> = std::result::Result<T, FormatError>;

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a temporary file beside `path`, then renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> FormatResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io_error(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_error(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> FormatResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_error(path, e))
}
