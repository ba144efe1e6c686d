//! Per-run manifest: the resolved-config hash, the seeds in play, and a
//! checksum for every artifact written. Re-running a command into the
//! same directory with the same config verifies the fresh artifacts
//! against the recorded checksums, so broken determinism is caught
//! instead of silently overwritten.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    /// File name to SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

/// Output directory handle that writes artifacts and accumulates their
/// checksums, then settles the manifest on [`OutputDir::finish`].
pub struct OutputDir {
    dir: PathBuf,
    manifest: Manifest,
}

impl OutputDir {
    pub fn create(
        dir: &Path,
        command: &str,
        config_sha256: String,
        seeds: BTreeMap<String, u64>,
    ) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                command: command.to_string(),
                config_sha256,
                seeds,
                artifacts: BTreeMap::new(),
            },
        })
    }

    /// Writes one artifact and records its checksum.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.manifest
            .artifacts
            .insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Verifies against a previously recorded manifest for the same
    /// command and config, then writes the manifest itself.
    pub fn finish(self) -> Result<(), CliError> {
        let manifest_path = self.dir.join(MANIFEST_NAME);
        if let Ok(text) = fs::read_to_string(&manifest_path) {
            let previous: Manifest = serde_json::from_str(&text).map_err(|e| {
                CliError::Io(format!("corrupt manifest {}: {e}", manifest_path.display()))
            })?;
            if previous.command == self.manifest.command
                && previous.config_sha256 == self.manifest.config_sha256
            {
                for (name, recorded) in &previous.artifacts {
                    match self.manifest.artifacts.get(name) {
                        Some(fresh) if fresh == recorded => {}
                        Some(_) => {
                            return Err(CliError::Numeric(format!(
                                "artifact {name} does not match the checksum recorded in \
                                 {}: same config produced different bytes",
                                manifest_path.display()
                            )));
                        }
                        None => {
                            return Err(CliError::Numeric(format!(
                                "artifact {name} is recorded in {} but was not produced \
                                 by this run",
                                manifest_path.display()
                            )));
                        }
                    }
                }
            }
        }
        let mut text = serde_json::to_string_pretty(&self.manifest)
            .expect("manifest serialization cannot fail");
        text.push('\n');
        fs::write(&manifest_path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", manifest_path.display())))?;
        Ok(())
    }
}
