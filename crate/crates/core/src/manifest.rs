//! Run manifests: resolved config, seed, input content hash, artifact list,
//! and per-stage wall-clock timings. Written last so a complete manifest
//! implies a complete run.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::DataError;

/// FNV-1a over bytes; used to fingerprint run inputs.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Combined fingerprint of a set of files (name + contents), order-stable.
pub fn hash_files(paths: &[PathBuf]) -> Result<u64, DataError> {
    let mut sorted: Vec<&PathBuf> = paths.iter().collect();
    sorted.sort();
    let mut acc: u64 = 0xcbf2_9ce4_8422_2325;
    for path in sorted {
        let name = path.display().to_string();
        acc ^= fnv1a(name.as_bytes());
        acc = acc.wrapping_mul(0x0000_0100_0000_01b3);
        let bytes = fs::read(path)?;
        acc ^= fnv1a(&bytes);
        acc = acc.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(acc)
}

#[derive(Debug, Default)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
    artifacts: Vec<PathBuf>,
    timings: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn new(command: &str) -> RunManifest {
        let mut m = RunManifest::default();
        m.put("command", command);
        m
    }

    pub fn put(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn put_config(&mut self, kv: &[(String, String)]) {
        for (k, v) in kv {
            self.entries.push((format!("config.{k}"), v.clone()));
        }
    }

    pub fn add_artifact(&mut self, path: &Path) {
        self.artifacts.push(path.to_path_buf());
    }

    pub fn add_artifacts(&mut self, paths: &[PathBuf]) {
        self.artifacts.extend_from_slice(paths);
    }

    pub fn add_timing(&mut self, stage: &str, seconds: f64) {
        self.timings.push((stage.to_string(), seconds));
    }

    pub fn artifacts(&self) -> &[PathBuf] {
        &self.artifacts
    }

    /// Writes `manifest.txt` into `dir`. Every artifact path is listed; the
    /// manifest itself is the final write of a run.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, DataError> {
        fs::create_dir_all(dir)?;
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k}={v}\n"));
        }
        for (stage, secs) in &self.timings {
            out.push_str(&format!("timing.{stage}_s={secs:.3}\n"));
        }
        for (i, artifact) in self.artifacts.iter().enumerate() {
            out.push_str(&format!("artifact.{i}={}\n", artifact.display()));
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, out)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_is_stable_and_input_sensitive() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_ne!(fnv1a(b"abc"), fnv1a(b"abd"));
        assert_eq!(fnv1a(b"abc"), fnv1a(b"abc"));
    }

    #[test]
    fn manifest_lists_everything_written() {
        let dir = std::env::temp_dir().join(format!("zshot_manifest_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let mut m = RunManifest::new("train");
        m.put("seed", 7);
        m.add_timing("pretrain", 1.25);
        m.add_artifact(Path::new("checkpoints/backbone.ckpt"));
        let path = m.write(&dir).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("command=train"));
        assert!(text.contains("seed=7"));
        assert!(text.contains("timing.pretrain_s=1.250"));
        assert!(text.contains("artifact.0=checkpoints/backbone.ckpt"));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn file_hash_changes_with_contents() {
        let dir = std::env::temp_dir().join(format!("zshot_hash_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let f = dir.join("x.txt");
        fs::write(&f, "one").unwrap();
        let h1 = hash_files(&[f.clone()]).unwrap();
        fs::write(&f, "two").unwrap();
        let h2 = hash_files(&[f.clone()]).unwrap();
        assert_ne!(h1, h2);
        fs::remove_dir_all(&dir).unwrap();
    }
}
