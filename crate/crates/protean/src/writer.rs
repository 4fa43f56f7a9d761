//! The single writer of a run directory.
//!
//! Files go to a sibling staging directory; `finish` adds the manifest and
//! moves the staging directory into place. Dropping an unfinished writer
//! deletes the staging directory, so failed runs leave nothing behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::manifest::{code_version, sha256_hex, FileEntry, Manifest, MANIFEST_FILE};
use crate::{Error, Result};

#[derive(Debug)]
pub struct RunWriter {
    target: PathBuf,
    staging: PathBuf,
    files: BTreeMap<String, FileEntry>,
    finished: bool,
}

impl RunWriter {
    pub fn create(target: &Path) -> Result<RunWriter> {
        let name = target.file_name().ok_or_else(|| Error::io(target, std::io::Error::new(std::io::ErrorKind::InvalidInput, "output path has no final component")))?;
        let mut staging_name = name.to_os_string();
        staging_name.push(".partial");
        let staging = target.with_file_name(staging_name);
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(RunWriter {
            target: target.to_path_buf(),
            staging,
            files: BTreeMap::new(),
            finished: false,
        })
    }

    pub fn target(&self) -> &Path {
        &self.target
    }

    /// Writes `bytes` at `relative` (a `/`-separated path).
    pub fn write(&mut self, relative: &str, bytes: &[u8]) -> Result<()> {
        let path = self.staging.join(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.insert(
            relative.to_string(),
            FileEntry {
                path: relative.to_string(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(bytes),
            },
        );
        Ok(())
    }

    /// Writes the manifest and replaces any previous directory at the target.
    pub fn finish(mut self, config_hash: &str) -> Result<Manifest> {
        let manifest = Manifest {
            config_hash: config_hash.to_string(),
            code_version: code_version(),
            files: self.files.values().cloned().collect(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let path = self.staging.join(MANIFEST_FILE);
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        if self.target.exists() {
            std::fs::remove_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        std::fs::rename(&self.staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
        self.finished = true;
        Ok(manifest)
    }
}

impl Drop for RunWriter {
    fn drop(&mut self) {
        if !self.finished {
            let _ = std::fs::remove_dir_all(&self.staging);
        }
    }
}
