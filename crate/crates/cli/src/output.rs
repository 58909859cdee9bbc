//! Atomic output writing and the run manifest.

use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::RunConfig;

/// FNV-1a 64-bit content hash, rendered as fixed-width hex.
pub fn fnv1a64(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("fnv1a64:{h:016x}")
}

#[derive(Serialize)]
struct OutputEntry {
    path: String,
    bytes: usize,
    hash: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool_version: &'static str,
    command: &'a str,
    config_hash: String,
    wall_ms: f64,
    config: &'a RunConfig,
    outputs: Vec<OutputEntry>,
}

/// Collects output files, writes each atomically (temp file + rename), and
/// finishes with a manifest recording the config hash and content hashes.
pub struct OutputWriter {
    dir: PathBuf,
    command: String,
    entries: Vec<OutputEntry>,
    started: Instant,
}

impl OutputWriter {
    pub fn new(dir: &Path, command: &str) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            entries: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> io::Result<()> {
        let bytes = contents.as_bytes();
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!("{name}.tmp"));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, &path)?;
        self.entries.push(OutputEntry {
            path: name.to_string(),
            bytes: bytes.len(),
            hash: fnv1a64(bytes),
        });
        Ok(())
    }

    pub fn finish(self, config: &RunConfig) -> io::Result<()> {
        let config_json = serde_json::to_string(config).expect("config serializes");
        let manifest = Manifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            config_hash: fnv1a64(config_json.as_bytes()),
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
            config,
            outputs: self.entries,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = self.dir.join("manifest.json");
        let tmp = self.dir.join("manifest.json.tmp");
        std::fs::write(&tmp, text.as_bytes())?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}
