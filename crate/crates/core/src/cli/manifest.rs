use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Relative to the run directory when the file lies inside it.
    pub path: String,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path, root: &Path) -> std::io::Result<FileHash> {
        let shown = path.strip_prefix(root).unwrap_or(path);
        Ok(FileHash { path: shown.to_string_lossy().replace('\\', "/"), sha256: sha256_file(path)? })
    }
}

/// Record of one command invocation: the resolved config plus hashes of
/// everything read and written. Passing it back as `--config` reruns the command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub summary: serde_json::Value,
    pub wall_seconds: f64,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest, super::CliError> {
        let s = std::fs::read_to_string(path).map_err(|source| super::CliError::Io { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&s)?)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        if let Some(p) = path.parent() {
            std::fs::create_dir_all(p)?;
        }
        let mut s = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        s.push('\n');
        std::fs::write(path, s)
    }
}
