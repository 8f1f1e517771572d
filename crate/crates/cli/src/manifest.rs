use std::fs;
use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Run record written as `manifest.json` next to every output.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    /// Fully resolved configuration; feeding it back through `--config`
    /// reproduces the run.
    pub config: Value,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn new(subcommand: &str, seed: Option<u64>, config: Value, started: SystemTime, elapsed: Duration) -> Self {
        Manifest {
            tool: "xbar".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            argv: std::env::args().collect(),
            seed,
            config,
            started_unix_s: started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_time_s: elapsed.as_secs_f64(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Load a JSON config, accepting either the bare config or a manifest that
/// wraps it.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if v.get("tool").and_then(Value::as_str) == Some("xbar") {
        if let Some(c) = v.get_mut("config") {
            v = c.take();
        }
    }
    serde_json::from_value(v).with_context(|| format!("invalid config in {}", path.display()))
}
