//! `run.toml`: what a command read, how it was configured, what it wrote.
//!
//! Input files are identified by git blob hashes
//! (`sha1("blob <len>\0" ++ content)`); a directory input additionally gets a
//! tree-style digest over its sorted `<hash> <relative path>` lines.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::config::Config;

pub const RUN_MANIFEST_FILE: &str = "run.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub hash: String,
    /// Number of files hashed (1 for a plain file).
    pub files: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Command-line arguments after the program name.
    pub args: Vec<String>,
    pub seed: u64,
    pub tool_version: String,
    pub inputs: Vec<InputHash>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    pub config: Config,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git's object id for a blob with these contents.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != RUN_MANIFEST_FILE) {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// Hashes a file, or every file under a directory (ignoring `run.toml`).
pub fn hash_input(path: &Path) -> Result<InputHash> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        let mut listing = String::new();
        for rel in &files {
            let bytes = fs::read(path.join(rel))
                .with_context(|| format!("reading {}", path.join(rel).display()))?;
            let rel = rel.to_string_lossy().replace('\\', "/");
            listing.push_str(&format!("{} {rel}\n", git_blob_hash(&bytes)));
        }
        Ok(InputHash {
            path: path.display().to_string(),
            hash: git_blob_hash(listing.as_bytes()),
            files: files.len(),
        })
    } else {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(InputHash {
            path: path.display().to_string(),
            hash: git_blob_hash(&bytes),
            files: 1,
        })
    }
}

impl RunManifest {
    pub fn new(command: &str, config: &Config, inputs: &[&Path]) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            seed: config.seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            inputs: inputs
                .iter()
                .map(|p| hash_input(p))
                .collect::<Result<_>>()?,
            outputs: Vec::new(),
            config: config.clone(),
        })
    }

    pub fn output(&mut self, rel: impl Into<String>) {
        self.outputs.push(rel.into());
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(RUN_MANIFEST_FILE);
        let text = toml::to_string(self).context("serializing run manifest")?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_git_object_ids() {
        // `git hash-object` of an empty file and of "hello\n".
        assert_eq!(
            git_blob_hash(b""),
            "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
        );
        assert_eq!(
            git_blob_hash(b"hello\n"),
            "ce013625030ba8dba906f756967f9e9ca394464a"
        );
    }

    #[test]
    fn directory_hash_tracks_content_and_skips_run_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("a.txt"), "a").unwrap();
        fs::write(dir.path().join("sub/b.txt"), "b").unwrap();
        let h1 = hash_input(dir.path()).unwrap();
        assert_eq!(h1.files, 2);
        fs::write(dir.path().join(RUN_MANIFEST_FILE), "x").unwrap();
        assert_eq!(hash_input(dir.path()).unwrap().hash, h1.hash);
        fs::write(dir.path().join("sub/b.txt"), "c").unwrap();
        assert_ne!(hash_input(dir.path()).unwrap().hash, h1.hash);
    }

    #[test]
    fn round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("train", &Config::default(), &[]).unwrap();
        m.output("model.ckpt");
        let p = m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::load(&p).unwrap(), m);
    }
}
