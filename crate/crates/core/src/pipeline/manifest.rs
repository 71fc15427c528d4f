//! Content hashes, per-stage cache stamps, the run manifest and the
//! run-directory lock.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Hash of a stage's inputs: its name, its config slice and upstream hashes.
pub fn stage_key<T: Serialize>(stage: &str, inputs: &T) -> String {
    let json = serde_json::to_vec(inputs).expect("stage inputs serialize");
    let mut hasher = Sha256::new();
    hasher.update(stage.as_bytes());
    hasher.update([0]);
    hasher.update(&json);
    hex::encode(hasher.finalize())
}

/// Record of one completed stage: the input key and each output's hash,
/// keyed by path relative to the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub key: String,
    pub outputs: BTreeMap<String, String>,
}

fn stamp_path(run_dir: &Path, stage: &str) -> PathBuf {
    run_dir.join(".stamps").join(format!("{stage}.json"))
}

/// The stamp for `stage` if it matches `key` and every listed output still
/// exists with the recorded hash.
pub fn fresh_stamp(run_dir: &Path, stage: &str, key: &str) -> Option<Stamp> {
    let text = fs::read_to_string(stamp_path(run_dir, stage)).ok()?;
    let stamp: Stamp = serde_json::from_str(&text).ok()?;
    if stamp.key != key {
        return None;
    }
    for (rel, hash) in &stamp.outputs {
        match sha256_file(&run_dir.join(rel)) {
            Ok(h) if &h == hash => {}
            _ => return None,
        }
    }
    Some(stamp)
}

/// Hash `outputs` and store the stamp for `stage`.
pub fn write_stamp(run_dir: &Path, stage: &str, key: &str, outputs: &[PathBuf]) -> io::Result<Stamp> {
    let mut hashes = BTreeMap::new();
    for rel in outputs {
        hashes.insert(rel_string(rel), sha256_file(&run_dir.join(rel))?);
    }
    let stamp = Stamp {
        key: key.to_string(),
        outputs: hashes,
    };
    let path = stamp_path(run_dir, stage);
    fs::create_dir_all(path.parent().expect("stamp dir"))?;
    fs::write(&path, serde_json::to_vec_pretty(&stamp)?)?;
    Ok(stamp)
}

pub fn rel_string(rel: &Path) -> String {
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: serde_json::Value,
    /// Every seed used, by purpose.
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputRecord>,
    /// Output path (relative to the run directory) to content hash.
    pub outputs: BTreeMap<String, String>,
    /// Stage name to input key.
    pub stages: BTreeMap<String, String>,
}

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(run_dir)?;
        let path = run_dir.join(".lock");
        let mut file = OpenOptions::new().write(true).create_new(true).open(&path)?;
        writeln!(file, "{}", std::process::id())?;
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn stamps_detect_changes() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "one").unwrap();
        let key = stage_key("mutate", &("x", 1));
        write_stamp(dir.path(), "mutate", &key, &[PathBuf::from("a.txt")]).unwrap();
        assert!(fresh_stamp(dir.path(), "mutate", &key).is_some());
        assert!(fresh_stamp(dir.path(), "mutate", &stage_key("mutate", &("x", 2))).is_none());
        fs::write(dir.path().join("a.txt"), "two").unwrap();
        assert!(fresh_stamp(dir.path(), "mutate", &key).is_none());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }
}
