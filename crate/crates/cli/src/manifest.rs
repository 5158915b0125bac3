//! Run manifests: the resolved parameters of a command plus checksums of
//! everything it read and wrote.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Run;
use crate::CliError;

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub run: Run,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Manifest written next to a command's primary output.
pub fn manifest_path(primary_output: &Path) -> PathBuf {
    let mut s = primary_output.as_os_str().to_owned();
    s.push(MANIFEST_SUFFIX);
    PathBuf::from(s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

pub fn digest_all(files: &[(&str, &Path)]) -> Result<Vec<FileDigest>, CliError> {
    files
        .iter()
        .map(|&(role, path)| {
            Ok(FileDigest { role: role.to_string(), path: path.to_path_buf(), sha256: sha256_file(path)? })
        })
        .collect()
}

impl RunManifest {
    pub fn record(run: &Run) -> Result<Self, CliError> {
        Ok(RunManifest {
            tool_version: crate::TOOL_VERSION.to_string(),
            run: run.clone(),
            inputs: digest_all(&run.inputs())?,
            outputs: digest_all(&run.outputs())?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: malformed manifest: {e}", path.display())))
    }
}
