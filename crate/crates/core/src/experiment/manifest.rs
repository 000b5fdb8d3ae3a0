use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsio::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub command: String,
    pub config_hash: String,
    /// Content hash of each dataset file read by the run.
    pub datasets: BTreeMap<String, String>,
    /// Updates, batch size, parameter count and sampler, identical across cells.
    pub compute: serde_json::Value,
    pub divergences: BTreeMap<String, usize>,
    pub phases: Vec<Phase>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Collects output files of one run directory and writes the manifest last.
#[derive(Debug)]
pub struct RunRecorder {
    root: PathBuf,
    files: BTreeMap<String, FileEntry>,
    phases: Vec<Phase>,
    pub divergences: BTreeMap<String, usize>,
    pub datasets: BTreeMap<String, String>,
    pub compute: serde_json::Value,
}

impl RunRecorder {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root,
            files: BTreeMap::new(),
            phases: Vec::new(),
            divergences: BTreeMap::new(),
            datasets: BTreeMap::new(),
            compute: serde_json::Value::Null,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(rel), bytes)?;
        self.register_bytes(rel, bytes);
        Ok(())
    }

    /// Records a file some other routine already wrote under the root.
    pub fn register(&mut self, rel: &str) -> Result<()> {
        let bytes = std::fs::read(self.path(rel)).map_err(|e| Error::io(self.path(rel), e))?;
        self.register_bytes(rel, &bytes);
        Ok(())
    }

    fn register_bytes(&mut self, rel: &str, bytes: &[u8]) {
        self.files.insert(
            rel.to_string(),
            FileEntry {
                path: rel.to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
    }

    pub fn time<T>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f(self);
        self.phases.push(Phase {
            name: name.into(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn files(&self) -> impl Iterator<Item = &FileEntry> {
        self.files.values()
    }

    pub fn finish(self, name: &str, command: &str, config_hash: &str) -> Result<RunManifest> {
        let manifest = RunManifest {
            name: name.to_string(),
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            datasets: self.datasets,
            compute: self.compute,
            divergences: self.divergences,
            phases: self.phases,
            files: self.files.into_values().collect(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        write_atomic(&self.root.join("manifest.json"), text.as_bytes())?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = RunRecorder::new(dir.path().join("run")).unwrap();
        r.write("tables/a.csv", b"x\n1\n").unwrap();
        r.write("metrics/b.csv", b"y\n").unwrap();
        r.time("eval", |_| Ok(())).unwrap();
        let m = r.finish("run", "grid", "abc").unwrap();
        let paths: Vec<_> = m.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(paths, vec!["metrics/b.csv", "tables/a.csv"]);
        assert_eq!(m.files[1].sha256, sha256_hex(b"x\n1\n"));
        let back: RunManifest =
            serde_json::from_slice(&std::fs::read(dir.path().join("run/manifest.json")).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(!dir.path().join("run/manifest.json.tmp").exists());
    }
}
