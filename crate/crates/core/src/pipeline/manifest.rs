//! Content hashes of everything a run wrote, for reproducibility checks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::featurize::LAYOUT_VERSION;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// No timestamps: two runs with the same seed and config produce identical
/// manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub layout_version: String,
    pub config_sha256: String,
    /// Path relative to the output root, always with `/` separators.
    pub files: BTreeMap<String, String>,
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            walk(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

impl Manifest {
    /// Hash every file under `root` except an existing manifest.
    pub fn scan(root: &Path, seed: u64, config_toml: &str) -> Result<Self> {
        let mut paths = Vec::new();
        walk(root, &mut paths)?;
        let mut files = BTreeMap::new();
        for p in paths {
            let rel = p.strip_prefix(root).expect("walked paths live under root");
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            if key == MANIFEST_FILE {
                continue;
            }
            files.insert(key, sha256_file(&p)?);
        }
        Ok(Manifest { seed, layout_version: LAYOUT_VERSION.into(), config_sha256: sha256_hex(config_toml.as_bytes()), files })
    }

    pub fn write(&self, root: &Path) -> Result<PathBuf> {
        let path = root.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let s = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn scan_uses_relative_paths_and_skips_itself() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("task1")).unwrap();
        fs::write(dir.path().join("task1/a.csv"), "x").unwrap();
        let m = Manifest::scan(dir.path(), 3, "seed = 3").unwrap();
        m.write(dir.path()).unwrap();
        let again = Manifest::scan(dir.path(), 3, "seed = 3").unwrap();
        assert_eq!(m, again);
        assert_eq!(m.files.keys().collect::<Vec<_>>(), vec!["task1/a.csv"]);
        assert_eq!(Manifest::read(dir.path()).unwrap(), m);
    }
}
