//! `manifest.toml`: what each stage read and wrote, keyed by content hash.

use crate::config::sha256_hex;
use crate::error::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Hash of the config behind the most recent stage run.
    pub config_hash: String,
    #[serde(default)]
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of the config sections this stage and its upstream depend on.
    pub fingerprint: String,
    pub seconds: f64,
    /// Paths relative to the output directory, or absolute for external
    /// inputs, mapped to SHA-256 of their contents.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    /// An absent manifest is an empty one.
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = Self::path(dir);
        match std::fs::read_to_string(&path) {
            Ok(text) => toml::from_str(&text).map_err(|e| CliError::Manifest {
                path,
                detail: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(source) => Err(CliError::Io { path, source }),
        }
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let path = Self::path(dir);
        let text = toml::to_string(self).map_err(|e| CliError::Manifest {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        std::fs::write(&path, text).map_err(|source| CliError::Io { path, source })
    }
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    std::fs::read(path)
        .map(|b| sha256_hex(&b))
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Every regular file below `dir`, sorted, as `/`-joined paths relative to
/// `dir`.
pub fn list_files(dir: &Path) -> CliResult<Vec<String>> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<String>) -> CliResult<()> {
        let io = |source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        };
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path.strip_prefix(base).expect("walk stays below base");
                let parts: Vec<_> = rel.iter().map(|p| p.to_string_lossy().into_owned()).collect();
                out.push(parts.join("/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap(), Manifest::default());
        let mut m = Manifest {
            config_hash: "ab".into(),
            ..Manifest::default()
        };
        m.stages.insert(
            "gen-constraints".into(),
            StageRecord {
                fingerprint: "cd".into(),
                seconds: 1.25,
                inputs: [("population/agent_0.txt".to_string(), "01".to_string())].into(),
                outputs: [("constraints/train.csv".to_string(), "02".to_string())].into(),
            },
        );
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn lists_nested_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("a/b")).unwrap();
        std::fs::write(dir.path().join("a/b/x.csv"), "1").unwrap();
        std::fs::write(dir.path().join("a/y.csv"), "2").unwrap();
        assert_eq!(list_files(dir.path()).unwrap(), vec!["a/b/x.csv", "a/y.csv"]);
        assert_eq!(
            hash_file(&dir.path().join("a/y.csv")).unwrap(),
            "d4735e3a265e16eee03f59718b9b5d03019c07d8b6c51f90da3a666eec13ab35"
        );
    }
}
