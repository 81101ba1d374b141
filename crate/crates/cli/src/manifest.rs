use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

/// Record of how an output directory was produced: command, parameters,
/// seeds, input files and hashes of every file written.
#[derive(Debug, Serialize)]
pub struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    parameters: Value,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &'static str, parameters: &impl Serialize) -> CliResult<Self> {
        Ok(Self {
            tool: "surfglm",
            version: env!("CARGO_PKG_VERSION"),
            command,
            parameters: serde_json::to_value(parameters)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        if path.is_dir() {
            for f in walk(path)? {
                self.inputs.push(FileEntry {
                    sha256: sha256_file(&f)?,
                    path: f.display().to_string(),
                });
            }
        } else {
            self.inputs.push(FileEntry {
                sha256: sha256_file(path)?,
                path: path.display().to_string(),
            });
        }
        Ok(())
    }

    /// Hashes every file under `dir` and writes `manifest.json` there.
    pub fn finish(mut self, dir: &Path) -> CliResult<()> {
        for f in walk(dir)? {
            let rel = f.strip_prefix(dir).unwrap_or(&f);
            if rel == Path::new("manifest.json") {
                continue;
            }
            self.outputs.push(FileEntry {
                sha256: sha256_file(&f)?,
                path: rel.display().to_string(),
            });
        }
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(())
    }
}

/// Files under `dir`, recursively, in sorted order.
pub fn walk(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            out.extend(walk(&p)?);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}
