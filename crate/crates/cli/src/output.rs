//! Artifact writing under `--out`, recorded in `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub command: String,
    pub sha256: String,
    pub config_hash: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, Entry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Output directory of one command invocation.
pub struct Output {
    dir: PathBuf,
    command: &'static str,
    manifest: Manifest,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn open(dir: &Path, command: &'static str) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(MANIFEST);
        let manifest = if path.exists() {
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::data(format!("{} is not a manifest: {e}", path.display())))?
        } else {
            Manifest::default()
        };
        Ok(Output {
            dir: dir.to_path_buf(),
            command,
            manifest,
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>, config_hash: &str) -> Result<PathBuf, CliError> {
        let bytes = bytes.as_ref();
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        self.manifest.artifacts.insert(
            name.to_string(),
            Entry {
                command: self.command.to_string(),
                sha256: sha256_hex(bytes),
                config_hash: config_hash.to_string(),
            },
        );
        self.written.push(path.clone());
        Ok(path)
    }

    /// Saves the manifest and lists the written files on stderr.
    pub fn finish(self) -> Result<(), CliError> {
        let path = self.dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        for p in &self.written {
            eprintln!("wrote {}", p.display());
        }
        Ok(())
    }
}
