use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
    pub format: String,
    pub format_version: u32,
}

/// Record of one subcommand run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub started_at_unix_s: u64,
    pub wall_clock_s: f64,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut f = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

fn artifact(path: &Path, recorded_as: PathBuf, format: &str, format_version: u32) -> Result<Artifact> {
    let (sha256, bytes) = sha256_file(path)?;
    Ok(Artifact {
        path: recorded_as,
        sha256,
        bytes,
        format: format.to_owned(),
        format_version,
    })
}

/// Collects artifacts while a subcommand runs.
pub struct ManifestBuilder {
    subcommand: String,
    out_dir: PathBuf,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
    started_at: u64,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, out_dir: &Path, config: &impl Serialize) -> Result<Self> {
        Ok(ManifestBuilder {
            subcommand: subcommand.to_owned(),
            out_dir: out_dir.to_owned(),
            config: serde_json::to_value(config)?,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            clock: Instant::now(),
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_owned(), value);
        self
    }

    pub fn input(&mut self, path: &Path, format: &str, format_version: u32) -> Result<&mut Self> {
        self.inputs.push(artifact(path, path.to_owned(), format, format_version)?);
        Ok(self)
    }

    /// Records `name` inside the output directory; it must exist and be
    /// non-empty.
    pub fn output(&mut self, name: &str, format: &str, format_version: u32) -> Result<&mut Self> {
        let path = self.out_dir.join(name);
        let a = artifact(&path, PathBuf::from(name), format, format_version)?;
        if a.bytes == 0 {
            bail!("output {} is empty", path.display());
        }
        self.outputs.push(a);
        Ok(self)
    }

    pub fn output_names(&self) -> Vec<String> {
        self.outputs.iter().map(|a| a.path.display().to_string()).collect()
    }

    pub fn finish(self) -> Result<RunManifest> {
        let manifest = RunManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            subcommand: self.subcommand,
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            started_at_unix_s: self.started_at,
            wall_clock_s: self.clock.elapsed().as_secs_f64(),
        };
        let path = self.out_dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        std::fs::write(&p, "abc").unwrap();
        let (h, n) = sha256_file(&p).unwrap();
        assert_eq!(h, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(n, 3);
    }

    #[test]
    fn manifest_round_trip_and_empty_output_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x\n1\n").unwrap();
        std::fs::write(dir.path().join("empty.csv"), "").unwrap();
        let mut b = ManifestBuilder::new("test", dir.path(), &serde_json::json!({"k": 1})).unwrap();
        b.seed("seed", 7);
        b.output("a.csv", "csv", 1).unwrap();
        assert!(b.output("empty.csv", "csv", 1).is_err());
        assert!(b.output("missing.csv", "csv", 1).is_err());
        let m = b.finish().unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.seeds["seed"], 7);
    }
}
