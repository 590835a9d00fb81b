//! Output staging: every file of a run is recorded so that a failed run can
//! be rolled back and a successful one described by a manifest.

use crate::error::CliError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub sha256: String,
}

/// Description of one run. Contains no timestamps, so identical inputs give
/// an identical manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub engine: String,
    pub paths: usize,
    pub version: String,
    pub files: Vec<OutputFile>,
}

pub const MANIFEST: &str = "manifest.json";

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<OutputFile>,
}

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self { dir: dir.to_path_buf(), created_dir, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        // Record first so a partially written file is still rolled back.
        self.files.retain(|f| f.name != name);
        self.files.push(OutputFile { name: name.to_string(), sha256: hex(bytes) });
        fs::write(&path, bytes).map_err(io_err(&path))?;
        Ok(path)
    }

    /// Writes CSV produced by `f` into `name`.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf).map_err(io_err(&self.dir.join(name)))?;
        self.write(name, &buf)
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|f| f.name.clone()).collect()
    }

    /// Writes the manifest listing every file of the run.
    pub fn commit(self, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        manifest.files = self.files.clone();
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let path = self.dir.join(MANIFEST);
        fs::write(&path, json).map_err(io_err(&path))?;
        Ok(manifest)
    }

    /// Removes every file written so far (and the directory if this run
    /// created it and it is now empty).
    pub fn rollback(self) {
        for f in &self.files {
            let _ = fs::remove_file(self.dir.join(&f.name));
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rollback_removes_files() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let mut out = OutputSet::create(&dir).unwrap();
        out.write("a.csv", b"x\n").unwrap();
        assert!(dir.join("a.csv").exists());
        out.rollback();
        assert!(!dir.exists());
    }
}
