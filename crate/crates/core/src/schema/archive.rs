//! Locating the policy embedded in an app archive.

use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use thiserror::Error;
use zip::result::ZipError;

/// Entry path of the embedded policy inside an app archive.
pub const EMBEDDED_POLICY_ENTRY: &str = "assets/odp/policy.json";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("cannot read archive: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
}

/// Returns the embedded policy bytes, or `None` when the archive has no
/// policy entry.
pub fn extract_embedded_policy(archive_path: &Path) -> Result<Option<Vec<u8>>, ArchiveError> {
    let file = File::open(archive_path)?;
    let mut archive = zip::ZipArchive::new(file).map_err(map_zip_error)?;
    let mut entry = match archive.by_name(EMBEDDED_POLICY_ENTRY) {
        Ok(e) => e,
        Err(ZipError::FileNotFound) => return Ok(None),
        Err(e) => return Err(map_zip_error(e)),
    };
    let mut buf = Vec::with_capacity(entry.size() as usize);
    entry.read_to_end(&mut buf)?;
    Ok(Some(buf))
}

fn map_zip_error(e: ZipError) -> ArchiveError {
    match e {
        ZipError::Io(io) => ArchiveError::Io(io),
        other => ArchiveError::Corrupt(other.to_string()),
    }
}
