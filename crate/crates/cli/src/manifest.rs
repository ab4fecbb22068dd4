//! Run manifests: what was run, on which inputs, with which seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_minutes: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_minutes: Option<f64>,
    /// Other flags, as given.
    #[serde(default)]
    pub parameters: BTreeMap<String, String>,
    /// Input file digests keyed by a path relative to the input's root.
    pub inputs: BTreeMap<String, String>,
    /// Output file digests keyed by path relative to `--out`.
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
    pub wall_seconds: f64,
}

/// Fields that depend on the wall clock.
pub const WALL_CLOCK_FIELDS: [&str; 3] = ["started_at", "finished_at", "wall_seconds"];

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            instance_hash: None,
            scenario: None,
            base_seed: None,
            replications: None,
            horizon_minutes: None,
            warmup_minutes: None,
            parameters: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started_at: now(),
            finished_at: String::new(),
            wall_seconds: 0.0,
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.parameters.insert(key.to_string(), value.to_string());
    }

    /// Stamps the end time, digests everything under `out` and writes the
    /// manifest there.
    pub fn finish(mut self, out: &Path, started: std::time::Instant) -> Result<Self> {
        self.finished_at = now();
        self.wall_seconds = started.elapsed().as_secs_f64();
        self.outputs = digest_tree(out, &[Path::new(MANIFEST_FILE)])?;
        let path = out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(CliError::io(&path))?;
        Ok(self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
    }

    /// Copy with the wall-clock fields blanked, for idempotence checks.
    pub fn without_wall_clock(&self) -> Self {
        RunManifest {
            started_at: String::new(),
            finished_at: String::new(),
            wall_seconds: 0.0,
            ..self.clone()
        }
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Git-style content digest: SHA-256 over `blob <len>\0` and the bytes.
pub fn blob_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    Ok(blob_digest(&bytes))
}

/// Digests of every file under `root`, keyed by `/`-separated relative
/// path. Paths in `skip` (relative to `root`) are left out, along with
/// anything beneath them.
pub fn digest_tree(root: &Path, skip: &[&Path]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(CliError::io(&dir))?;
        for entry in entries {
            let entry = entry.map_err(CliError::io(&dir))?;
            let path = entry.path();
            let rel = path.strip_prefix(root).expect("under root");
            if skip.iter().any(|s| rel.starts_with(s)) {
                continue;
            }
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                out.insert(key, digest_file(&path)?);
            }
        }
    }
    Ok(out)
}

/// One digest over a digest map plus extra identifying lines.
pub fn combined_digest(files: &BTreeMap<String, String>, extra: &[String]) -> String {
    let mut h = Sha256::new();
    for (k, v) in files {
        h.update(format!("{v}  {k}\n").as_bytes());
    }
    for e in extra {
        h.update(e.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}
