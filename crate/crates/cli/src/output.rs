//! Artifact writing with provenance sidecars.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use rom_core::io::{self, Meta};

use crate::error::CliError;

/// Stamps every artifact of one command with the configuration hash.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub config_hash: String,
    pub command: &'static str,
}

impl Artifacts {
    pub fn new(config_hash: String, command: &'static str) -> Self {
        Self { config_hash, command }
    }

    pub fn meta(&self) -> Meta {
        let mut m = Meta::new();
        m.set("config_hash", &self.config_hash).set("command", self.command);
        m
    }

    /// Writes `text` and its sidecar.
    pub fn write_text(&self, path: &Path, text: &str, extra: &[(&str, String)]) -> Result<(), CliError> {
        if let Some(parent) = path.parent() {
            io::create_dir_all(parent)?;
        }
        io::write_text(path, text)?;
        let mut m = self.meta();
        for (k, v) in extra {
            m.set(*k, v);
        }
        m.set("sha256", file_digest(path)?);
        m.write(&io::sidecar_path(path))?;
        Ok(())
    }

    /// Adds provenance to the sidecar of every file under `dir`, creating
    /// sidecars where none exist.
    pub fn seal_dir(&self, dir: &Path) -> Result<(), CliError> {
        for path in files_under(dir)? {
            if path.extension().is_some_and(|e| e == "meta") {
                continue;
            }
            let side = io::sidecar_path(&path);
            let mut m = if side.exists() { Meta::read(&side)? } else { Meta::new() };
            m.set("config_hash", &self.config_hash)
                .set("command", self.command)
                .set("sha256", file_digest(&path)?);
            m.write(&side)?;
        }
        Ok(())
    }
}

fn os(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(os(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// SHA-256 over the relative names and contents of every file under `dir`.
pub fn dir_digest(dir: &Path) -> Result<String, CliError> {
    let mut h = Sha256::new();
    for p in files_under(dir)? {
        let rel = p.strip_prefix(dir).unwrap_or(&p);
        let bytes = std::fs::read(&p).map_err(os(&p))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Regular files under `dir`, recursively, in sorted order.
pub fn files_under(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(os(&d))? {
            let p = entry.map_err(os(&d))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecars_carry_the_hash() {
        let dir = tempfile::tempdir().unwrap();
        let art = Artifacts::new("abc".into(), "test");
        let p = dir.path().join("sub/x.csv");
        art.write_text(&p, "a,b\n1,2\n", &[("rows", "1".into())]).unwrap();
        std::fs::write(dir.path().join("y.bin"), b"xyz").unwrap();
        art.seal_dir(dir.path()).unwrap();
        let m = Meta::read(&io::sidecar_path(&p)).unwrap();
        assert_eq!(m.get("config_hash"), Some("abc"));
        assert_eq!(m.get("rows"), Some("1"));
        let y = Meta::read(&dir.path().join("y.bin.meta")).unwrap();
        assert_eq!(y.get("sha256"), Some(hex::encode(Sha256::digest(b"xyz")).as_str()));
        assert!(!dir.path().join("y.bin.meta.meta").exists());
    }
}
