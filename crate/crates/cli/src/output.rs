use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use regime_stop::model::RawParams;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub fn schema(kind: &str) -> String {
    format!("regime-stop/{kind}/v{SCHEMA_VERSION}")
}

pub fn json_text(value: &Value, pretty: bool) -> String {
    let mut s = if pretty {
        serde_json::to_string_pretty(value)
    } else {
        serde_json::to_string(value)
    }
    .expect("JSON values always serialize");
    s.push('\n');
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputDigest {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

impl OutputDigest {
    pub fn of(name: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            name: name.into(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        }
    }
}

/// What a run needs to be repeated: the arguments, the resolved
/// parameters and seed, the tool version, and digests of what it wrote.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema: String,
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub output_schema: String,
    pub argv: Vec<String>,
    pub params: RawParams,
    pub seed: Option<u64>,
    pub inputs: Vec<OutputDigest>,
    pub outputs: Vec<OutputDigest>,
}

/// Writes `bytes` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::io(p, e)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

/// `--manifest` if given, else `<out>.manifest.json` next to `--out`, else
/// a single line on stderr.
pub fn manifest_target(manifest: Option<&Path>, out: Option<&Path>) -> Option<PathBuf> {
    manifest.map(Path::to_path_buf).or_else(|| {
        out.map(|o| {
            let mut name = o.as_os_str().to_owned();
            name.push(".manifest.json");
            PathBuf::from(name)
        })
    })
}
