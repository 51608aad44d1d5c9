use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Serialize)]
struct FileRecord {
    path: String,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema: u32,
    command: &'a str,
    config: &'a serde_json::Value,
    versions: Versions,
    wall_time_s: f64,
    files: &'a [FileRecord],
}

#[derive(Serialize)]
struct Versions {
    ensemble_cli: &'static str,
    ensemble_core: &'static str,
}

/// Output directory that hashes everything written through it.
pub struct Output {
    dir: PathBuf,
    files: Vec<FileRecord>,
    started: Instant,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::config(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Output { dir: dir.to_path_buf(), files: Vec::new(), started: Instant::now() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(FileRecord {
            path: name.to_string(),
            bytes: bytes.len(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::numerical(format!("serializing {name}: {e}")))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(self, command: &str, config: &serde_json::Value) -> Result<PathBuf, Failure> {
        let manifest = Manifest {
            schema: 1,
            command,
            config,
            versions: Versions { ensemble_cli: env!("CARGO_PKG_VERSION"), ensemble_core: ensemble_core::VERSION },
            wall_time_s: self.started.elapsed().as_secs_f64(),
            files: &self.files,
        };
        let path = self.dir.join("manifest.json");
        let mut s = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::numerical(e.to_string()))?;
        s.push('\n');
        fs::write(&path, s).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Rows of numbers as CSV under a header, 17 significant digits.
pub fn csv(header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> Vec<u8> {
    let mut s = String::from(header);
    s.push('\n');
    for row in rows {
        let line: Vec<String> = row.into_iter().map(ensemble_core::control::fmt_num).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s.into_bytes()
}
