use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use soilcast::data::sha256_hex;

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// SHA-256 of every artifact under the output directory, keyed by relative
/// path with `/` separators.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(out: &Path) -> Result<Self, CliError> {
        let p = out.join(MANIFEST_FILE);
        if !p.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Failed(format!("{}: {e}", p.display())))
    }

    /// Hashes the given files (absolute, under `out`) into the manifest on disk.
    pub fn record(out: &Path, files: &[impl AsRef<Path>]) -> Result<Self, CliError> {
        let mut m = Self::load(out)?;
        for f in files {
            let f = f.as_ref();
            let bytes = std::fs::read(f).map_err(|e| CliError::io(f, e))?;
            let rel = f.strip_prefix(out).unwrap_or(f);
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            m.artifacts.insert(key, sha256_hex(&bytes));
        }
        let p = out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(m)
    }
}
