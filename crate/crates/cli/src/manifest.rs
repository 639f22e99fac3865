//! Artifact bookkeeping. Every batch command funnels its outputs through
//! an `ArtifactWriter` so the run directory always ends with a
//! manifest.json naming the inputs, the resolved seed, the parameters, and
//! a content digest per output. Timestamps are deliberately absent: the
//! same invocation must reproduce the same bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use sdforge_core::Result;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub experiment_path: String,
    /// Digest of the experiment file as given, before overrides.
    pub experiment_sha256: String,
    /// Resolved root seed all stage streams derive from.
    pub seed: u64,
    pub parameters: BTreeMap<String, Value>,
    /// Output file name to content digest.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

pub struct ArtifactWriter {
    dir: PathBuf,
    outputs: BTreeMap<String, String>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Pretty JSON with a trailing newline.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Writes manifest.json and consumes the writer. The manifest digests
    /// every other artifact but not itself.
    pub fn finish(
        mut self,
        command: &str,
        experiment_path: &Path,
        experiment_sha256: String,
        seed: u64,
        parameters: BTreeMap<String, Value>,
    ) -> Result<()> {
        let manifest = Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.to_string(),
            experiment_path: experiment_path.display().to_string(),
            experiment_sha256,
            seed,
            parameters,
            outputs: std::mem::take(&mut self.outputs),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        std::fs::write(self.dir.join("manifest.json"), bytes)?;
        Ok(())
    }
}
