//! Run manifest: per-stage cache keys and content hashes of every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of the stage's configuration subsection and upstream artifacts.
    pub key: String,
    pub artifacts: Vec<Artifact>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("stage has not been run")]
    NotRun,
    #[error("artifact {0} is missing")]
    Missing(String),
    #[error("artifact {0} does not match its recorded hash")]
    Mismatch(String),
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl Manifest {
    pub fn load(dir: &Path) -> io::Result<Option<Manifest>> {
        let path = dir.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(&tmp, text + "\n")?;
        fs::rename(tmp, dir.join(MANIFEST_FILE))
    }

    /// Checks that a stage ran and every artifact still matches its hash.
    pub fn verify(&self, dir: &Path, stage: &str) -> Result<&StageRecord, VerifyError> {
        let rec = self.stages.get(stage).ok_or(VerifyError::NotRun)?;
        for a in &rec.artifacts {
            let p = dir.join(&a.path);
            match sha256_file(&p) {
                Ok(h) if h == a.sha256 => {}
                Ok(_) => return Err(VerifyError::Mismatch(a.path.clone())),
                Err(_) => return Err(VerifyError::Missing(a.path.clone())),
            }
        }
        Ok(rec)
    }

    /// Hashes every file under `dir/stage` into a record.
    pub fn record(dir: &Path, stage: &str, key: String, wall_clock_secs: f64) -> io::Result<StageRecord> {
        let mut files = Vec::new();
        collect_files(&dir.join(stage), &mut files)?;
        files.sort();
        let mut artifacts = Vec::with_capacity(files.len());
        for f in files {
            let rel = f
                .strip_prefix(dir)
                .expect("artifact under run dir")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            artifacts.push(Artifact {
                sha256: sha256_file(&f)?,
                path: rel,
            });
        }
        Ok(StageRecord {
            key,
            artifacts,
            wall_clock_secs,
        })
    }
}

fn collect_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> io::Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
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
    fn record_and_verify_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("s/sub")).unwrap();
        fs::write(dir.path().join("s/a.csv"), "x\n").unwrap();
        fs::write(dir.path().join("s/sub/b.csv"), "y\n").unwrap();
        let rec = Manifest::record(dir.path(), "s", "k".into(), 0.0).unwrap();
        assert_eq!(rec.artifacts.iter().map(|a| a.path.as_str()).collect::<Vec<_>>(), ["s/a.csv", "s/sub/b.csv"]);
        let mut m = Manifest::default();
        m.stages.insert("s".into(), rec);
        m.save(dir.path()).unwrap();
        let m = Manifest::load(dir.path()).unwrap().unwrap();
        assert!(m.verify(dir.path(), "s").is_ok());
        fs::write(dir.path().join("s/a.csv"), "z\n").unwrap();
        assert!(matches!(m.verify(dir.path(), "s"), Err(VerifyError::Mismatch(_))));
        assert!(matches!(m.verify(dir.path(), "t"), Err(VerifyError::NotRun)));
    }
}
