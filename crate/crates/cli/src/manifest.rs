//! Run manifests: what was run, on which inputs, producing which outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const FILE: &str = "manifest.json";

/// Git-style object hash: sha256 over `blob <len>\0` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()));
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    Ok(content_hash(&crate::read(path)?))
}

#[derive(Debug, Default)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, argv: &[String]) -> Self {
        Manifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            ..Manifest::default()
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    /// Hash every file in `dir` except the manifest itself.
    pub fn outputs_from(&mut self, dir: &Path) -> Result<(), CliError> {
        self.outputs = hash_outputs(dir)?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let v = json!({
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        let mut s = serde_json::to_string_pretty(&v).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        crate::write(&dir.join(FILE), self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = String::from_utf8_lossy(&crate::read(path)?).into_owned();
        let bad = |reason: &str| CliError::Manifest {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let v: Value = serde_json::from_str(&text).map_err(|e| bad(&e.to_string()))?;
        let strings = |key: &str| -> Result<BTreeMap<String, String>, CliError> {
            v[key]
                .as_object()
                .ok_or_else(|| bad(&format!("`{key}` is not an object")))?
                .iter()
                .map(|(k, h)| Ok((k.clone(), h.as_str().ok_or_else(|| bad("hash is not a string"))?.to_string())))
                .collect()
        };
        Ok(Manifest {
            command: v["command"].as_str().ok_or_else(|| bad("missing `command`"))?.to_string(),
            argv: v["argv"]
                .as_array()
                .ok_or_else(|| bad("missing `argv`"))?
                .iter()
                .map(|a| a.as_str().map(str::to_string).ok_or_else(|| bad("argv entry is not a string")))
                .collect::<Result<_, _>>()?,
            config: v["config"].clone(),
            seed: v["seed"].as_u64(),
            inputs: strings("inputs")?,
            outputs: strings("outputs")?,
        })
    }
}

pub fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let path: PathBuf = entry
            .map_err(|source| CliError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if path.is_file() && name != FILE {
            out.insert(name, hash_file(&path)?);
        }
    }
    Ok(out)
}
