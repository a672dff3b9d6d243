use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::{CliError, CliResult};

pub const MANIFEST_FORMAT: &str = "liftpose-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> CliResult<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: format!("{:x}", Sha256::digest(&bytes)),
        })
    }
}

/// Everything needed to rerun a command: the verbatim arguments, the resolved configuration and
/// digests of what it read and wrote. No timestamps, so reruns produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(CliError::data(format!(
                "{} is not a v{MANIFEST_VERSION} manifest",
                path.display()
            )));
        }
        Ok(m)
    }

    pub fn write(&self, primary_output: &Path) -> CliResult<PathBuf> {
        let path = Self::path_for(primary_output);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::data(e.to_string()))?;
        std::fs::write(&path, text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    /// Inputs must still hash to what the original run read.
    pub fn check_inputs(&self) -> CliResult<()> {
        for input in &self.inputs {
            let now = FileDigest::of(&input.path)?;
            if now.sha256 != input.sha256 {
                return Err(CliError::data(format!(
                    "input {} changed since the manifest was written",
                    input.path.display()
                )));
            }
        }
        Ok(())
    }
}
