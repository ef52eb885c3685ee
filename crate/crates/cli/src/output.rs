//! Staged output files and the per-run `run.json` record.
//!
//! Outputs are written under temporary names and renamed into place only when the
//! command succeeds; dropping an uncommitted [`Outputs`] removes them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Params;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub config_hash: String,
    pub params: BTreeMap<String, String>,
    pub seed: u64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct Outputs {
    dir: PathBuf,
    staged: Vec<(PathBuf, PathBuf)>,
    committed: bool,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            staged: Vec::new(),
            committed: false,
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.partial"));
        fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
        self.staged.push((tmp, target));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut bytes = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut bytes, r)?;
            bytes.push(b'\n');
        }
        self.write(name, &bytes)
    }

    /// Writes `run.json` and moves every staged file into place.
    pub fn commit(mut self, command: &str, inputs: &[PathBuf], params: &Params, seed: u64) -> Result<Vec<PathBuf>> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let record = RunRecord {
            command: command.to_owned(),
            inputs,
            outputs: self
                .staged
                .iter()
                .filter_map(|(_, t)| t.file_name().map(|n| n.to_string_lossy().into_owned()))
                .collect(),
            config_hash: params.hash(),
            params: params.map().clone(),
            seed,
        };
        self.write_json("run.json", &record)?;
        let mut done = Vec::with_capacity(self.staged.len());
        for (tmp, target) in &self.staged {
            fs::rename(tmp, target).with_context(|| format!("moving output to {}", target.display()))?;
            done.push(target.clone());
        }
        self.committed = true;
        Ok(done)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for (tmp, _) in &self.staged {
                let _ = fs::remove_file(tmp);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigFile;

    #[test]
    fn dropped_outputs_leave_nothing() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut out = Outputs::new(dir.path()).unwrap();
            out.write("a.json", b"{}").unwrap();
        }
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn commit_writes_run_record() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, "abc").unwrap();
        let mut out = Outputs::new(dir.path()).unwrap();
        out.write("a.json", b"{}").unwrap();
        let params = Params::resolve(&[("seed", "3".into())], &ConfigFile::default(), vec![]);
        out.commit("demo", &[input], &params, 3).unwrap();
        let run: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("run.json")).unwrap()).unwrap();
        assert_eq!(
            run["inputs"][0]["sha256"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(run["outputs"][0], "a.json");
        assert!(dir.path().join("a.json").exists());
    }
}
