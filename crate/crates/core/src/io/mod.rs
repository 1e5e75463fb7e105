//! On-disk containers: phantom datasets, trained models and SH coefficient maps.
//!
//! Every binary container is little-endian and ends with a CRC32 of all
//! preceding bytes.

mod binary;
mod coefficients;
mod dataset;
mod model;

pub use coefficients::{fit_sh_maps, read_sh_maps, write_sh_maps, ShCoefficientMaps, SH_MAPS_MAGIC};
pub use dataset::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC};
pub use model::{decode_model, encode_model, read_model, write_model, MODEL_MAGIC};

pub const FORMAT_VERSION: u32 = 1;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
