//! Run directory with a manifest recording provenance of every file.
//!
//! `manifest.json` is written first with status `running`, rewritten after
//! every output, and finalized as `complete` or `failed`. Content ids use git
//! blob framing: `sha256("blob {len}\0" ++ bytes)`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use featcache::io::write_atomic;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

pub fn content_id(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

pub fn text_hash(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub id: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub status: Status,
    pub seed: u64,
    pub config_hash: String,
    /// Effective configuration with every default spelled out.
    pub config: String,
    pub inputs: BTreeMap<String, FileRecord>,
    pub outputs: Vec<FileRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct RunDir {
    root: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    /// Creates the directory and records the run as started.
    /// `config_hash` identifies the experiment independently of where it is written.
    pub fn create(root: &Path, command: &str, config_toml: &str, config_hash: String, seed: u64) -> Result<Self, CliError> {
        let run = Self {
            root: root.to_path_buf(),
            manifest: Manifest {
                command: command.into(),
                status: Status::Running,
                seed,
                config_hash,
                config: config_toml.into(),
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                error: None,
            },
        };
        run.flush()?;
        Ok(run)
    }

    /// Reads an input file and records its content id under `role`.
    pub fn read_input(&mut self, role: &str, path: &Path) -> Result<String, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        self.manifest.inputs.insert(
            role.into(),
            FileRecord {
                path: path.display().to_string(),
                id: content_id(&bytes),
            },
        );
        self.flush()?;
        String::from_utf8(bytes).map_err(|_| CliError::Input(format!("{} is not UTF-8", path.display())))
    }

    /// Writes `rel` under the run directory atomically and records it.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.root.join(rel), bytes)?;
        let record = FileRecord {
            path: rel.into(),
            id: content_id(bytes),
        };
        match self.manifest.outputs.iter_mut().find(|r| r.path == rel) {
            Some(r) => *r = record,
            None => self.manifest.outputs.push(record),
        }
        self.flush()
    }

    pub fn complete(mut self) -> Result<(), CliError> {
        self.manifest.status = Status::Complete;
        self.flush()
    }

    pub fn fail(mut self, err: &CliError) -> Result<(), CliError> {
        self.manifest.status = Status::Failed;
        self.manifest.error = Some(err.to_string());
        self.flush()
    }

    fn flush(&self) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(featcache::Error::from)?;
        text.push('\n');
        write_atomic(&self.root.join(MANIFEST), text.as_bytes())?;
        Ok(())
    }
}
