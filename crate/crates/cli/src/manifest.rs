//! Per-run manifests: settings echo plus SHA-256 digests of inputs and outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingInput {
            path: path.to_path_buf(),
        },
        _ => CliError::io(path, e),
    })?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(
        || path.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub settings: BTreeMap<String, String>,
    pub resolved: BTreeMap<String, serde_json::Value>,
    /// Keyed by the role the file plays in the command.
    pub inputs: BTreeMap<String, FileDigest>,
    /// Keyed by file name.
    pub outputs: BTreeMap<String, String>,
    /// Outputs holding wall-clock timings, listed but not digested.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub timing_outputs: Vec<String>,
}

/// Collects what one command reads and writes, then writes its manifest.
pub struct Run {
    out_dir: PathBuf,
    manifest: Manifest,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn start(
        command: &str,
        out_dir: PathBuf,
        settings: BTreeMap<String, String>,
    ) -> CliResult<Self> {
        fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
        Ok(Self {
            out_dir,
            manifest: Manifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                settings,
                resolved: BTreeMap::new(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                timing_outputs: Vec::new(),
            },
            outputs: Vec::new(),
        })
    }

    /// Records an input file; fails if it does not exist.
    pub fn input(&mut self, role: &str, path: &Path) -> CliResult<PathBuf> {
        let sha256 = sha256_file(path)?;
        self.manifest.inputs.insert(
            role.to_string(),
            FileDigest {
                file: file_name(path),
                sha256,
            },
        );
        Ok(path.to_path_buf())
    }

    pub fn resolved(&mut self, key: &str, value: impl Serialize) -> CliResult<()> {
        let v = serde_json::to_value(value).map_err(idistill::Error::from)?;
        self.manifest.resolved.insert(key.to_string(), v);
        Ok(())
    }

    /// Path of an output file in the output directory; digested on finish.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    /// Path of an output whose content includes timings.
    pub fn timing_output(&mut self, name: &str) -> PathBuf {
        self.manifest.timing_outputs.push(name.to_string());
        self.out_dir.join(name)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir
            .join(format!("manifest.{}.json", self.manifest.command))
    }

    pub fn finish(mut self) -> CliResult<PathBuf> {
        for p in &self.outputs {
            self.manifest.outputs.insert(file_name(p), sha256_file(p)?);
        }
        let path = self.manifest_path();
        let mut text =
            serde_json::to_string_pretty(&self.manifest).map_err(idistill::Error::from)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            sha256_file(&dir.path().join("none")).unwrap_err().code(),
            crate::error::code::IO
        );
    }

    #[test]
    fn manifest_lists_inputs_and_outputs_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, "x").unwrap();
        let mut run = Run::start("eval", dir.path().join("out"), BTreeMap::new()).unwrap();
        run.input("corpus", &input).unwrap();
        let out = run.output("metrics.json");
        fs::write(&out, "{}").unwrap();
        let log = run.timing_output("log.jsonl");
        fs::write(&log, "1").unwrap();
        let path = run.finish().unwrap();
        let text = fs::read_to_string(path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["inputs"]["corpus"]["file"], "in.txt");
        assert!(v["outputs"]["metrics.json"].is_string());
        assert_eq!(v["timing_outputs"][0], "log.jsonl");
        assert!(!text.contains(&dir.path().display().to_string()));
    }
}
