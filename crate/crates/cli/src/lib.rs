//! Run manifests: what a command read, what it wrote, and content hashes of
//! both, so a rerun can be checked byte for byte.

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Hash of `content` framed the way git frames a blob, with SHA-256.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub hash: String,
}

impl Artifact {
    /// Records the absolute path, so the manifest verifies from any directory.
    pub fn of(path: &Path) -> io::Result<Self> {
        Ok(Self {
            path: std::fs::canonicalize(path)?,
            hash: blob_hash(&std::fs::read(path)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Derived from the command, config and input hashes, so identical runs
    /// share an id.
    pub run_id: String,
    pub command: String,
    /// Config document in `key = value` form, when the command takes one.
    pub config: Option<String>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(command: &str, config: Option<String>, inputs: &[PathBuf], outputs: &[PathBuf]) -> io::Result<Self> {
        let inputs = inputs.iter().map(|p| Artifact::of(p)).collect::<io::Result<Vec<_>>>()?;
        let outputs = outputs.iter().map(|p| Artifact::of(p)).collect::<io::Result<Vec<_>>>()?;
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(config.as_deref().unwrap_or("").as_bytes());
        for a in &inputs {
            h.update([0]);
            h.update(a.hash.as_bytes());
        }
        Ok(Self {
            run_id: hex::encode(&h.finalize()[..8]),
            command: command.into(),
            config,
            inputs,
            outputs,
        })
    }

    /// Recomputes every hash; returns one message per missing or changed file.
    pub fn verify(&self) -> Vec<String> {
        let mut bad = Vec::new();
        for a in self.inputs.iter().chain(&self.outputs) {
            match std::fs::read(&a.path) {
                Ok(bytes) if blob_hash(&bytes) == a.hash => {}
                Ok(_) => bad.push(format!("{}: content hash changed", a.path.display())),
                Err(e) => bad.push(format!("{}: {e}", a.path.display())),
            }
        }
        bad
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        std::fs::write(path, json + "\n")
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        serde_json::from_slice(&std::fs::read(path)?).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_framing() {
        // printf 'blob 5\0hello' | sha256sum
        assert_eq!(blob_hash(b"hello"), "8aec4e4876f854f688d0ebfc8f37598f38e5fd6903cccc850ca36591175aeb60");
        assert_eq!(blob_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
    }
}
