//! Stage manifests: config digest, input/output digests, and stage stats.
//!
//! Byte-identical inputs under the same config and seed produce
//! byte-identical manifests; no timestamps or absolute machine state.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

pub struct Manifest {
    stage: &'static str,
    config_digest: String,
    seed: u64,
    inputs: Vec<(PathBuf, String)>,
    outputs: Vec<(PathBuf, String)>,
    stats: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(stage: &'static str, config_digest: &str, seed: u64) -> Manifest {
        Manifest {
            stage,
            config_digest: config_digest.to_string(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            stats: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push((path.to_path_buf(), file_digest(path)?));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.push((path.to_path_buf(), file_digest(path)?));
        Ok(())
    }

    pub fn stat(&mut self, key: &str, value: impl ToString) {
        self.stats.push((key.to_string(), value.to_string()));
    }

    pub fn write(mut self, out_dir: &Path) -> Result<PathBuf, CliError> {
        self.inputs.sort();
        self.outputs.sort();
        let path = out_dir.join(format!("{}.manifest", self.stage));
        let mut f = fs::File::create(&path)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        let mut emit = |line: String| -> Result<(), CliError> {
            writeln!(f, "{line}").map_err(|e| CliError::Data(e.to_string()))
        };
        emit("# proxclass manifest".into())?;
        emit(format!("stage {}", self.stage))?;
        emit(format!("config_digest {}", self.config_digest))?;
        emit(format!("seed {}", self.seed))?;
        for (p, digest) in &self.inputs {
            emit(format!("input {} {digest}", p.display()))?;
        }
        for (p, digest) in &self.outputs {
            let rel = p.strip_prefix(out_dir).unwrap_or(p);
            emit(format!("output {} {digest}", rel.display()))?;
        }
        for (key, value) in &self.stats {
            emit(format!("stat {key} {value}"))?;
        }
        Ok(path)
    }
}

/// Missing-upstream-artifact error that names the stage to run first.
pub fn require_artifact(path: &Path, producer_stage: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "missing {}; run `proxclass {producer_stage}` first",
            path.display()
        )))
    }
}
