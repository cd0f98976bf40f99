use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const FAILURE: &str = "error.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_sha256: String,
    pub seed: u64,
    pub workers: usize,
    pub wall_clock_seconds: f64,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let p = dir.join(MANIFEST);
        let text = fs::read_to_string(&p)
            .map_err(|_| CliError::Schema(format!("{} is not a completed run (no {MANIFEST})", dir.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", p.display())))
    }

    /// Names of listed files whose checksum does not match the disk.
    pub fn mismatches(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|f| fs::read(dir.join(&f.name)).map(|b| sha256_hex(&b) != f.sha256).unwrap_or(true))
            .map(|f| f.name.clone())
            .collect()
    }
}

/// Serializes every write of one run into its output directory.
pub struct RunWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl RunWriter {
    /// Creates the directory and removes a stale manifest or failure note
    /// from an earlier run.
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        for stale in [MANIFEST, FAILURE] {
            let p = dir.join(stale);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            }
        }
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.dir.join(name);
        fs::write(&p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        self.record(name, bytes);
        Ok(())
    }

    /// Registers a file some other routine already wrote.
    pub fn adopt(&mut self, name: &str) -> Result<(), CliError> {
        let p = self.dir.join(name);
        let bytes = fs::read(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        self.record(name, &bytes);
        Ok(())
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry { name: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Notes a failed run; no manifest follows.
    pub fn fail(&mut self, err: &CliError) -> Result<(), CliError> {
        let note = serde_json::json!({
            "error": err.to_string(),
            "exit_code": err.exit_code(),
            "partial_files": self.files.iter().map(|f| f.name.clone()).collect::<Vec<_>>(),
        });
        let p = self.dir.join(FAILURE);
        fs::write(&p, serde_json::to_string_pretty(&note).unwrap_or_default())
            .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    }

    /// Writes the manifest through a temporary file so that it appears
    /// atomically and last.
    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        manifest.files = self.files;
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        let tmp = self.dir.join(".manifest.json.tmp");
        fs::write(&tmp, text).map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
        fs::rename(&tmp, self.dir.join(MANIFEST)).map_err(|e| CliError::Io(e.to_string()))?;
        Ok(manifest)
    }
}

/// Comma-separated table with a header row.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { text: header.join(",") + "\n" }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}
