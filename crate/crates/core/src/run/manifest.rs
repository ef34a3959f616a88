//! Provenance record written next to every command's outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_atomic, RunError};
use crate::generator::sha256_hex;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    pub path: String,
    pub sha256: String,
}

impl ArtifactDigest {
    pub fn of_file(path: &Path) -> Result<Self, RunError> {
        let bytes = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
        Ok(ArtifactDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<ArtifactDigest>,
    pub outputs: Vec<ArtifactDigest>,
    pub started_at: String,
    pub finished_at: Option<String>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl RunManifest {
    pub fn start(command: &str, config: &impl Serialize) -> Self {
        RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: now(),
            finished_at: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), RunError> {
        self.inputs.push(ArtifactDigest::of_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), RunError> {
        self.outputs.push(ArtifactDigest::of_file(path)?);
        Ok(())
    }

    pub fn finish_and_write(mut self, path: &Path) -> Result<Self, RunError> {
        self.finished_at = Some(now());
        let mut bytes = serde_json::to_vec_pretty(&self).expect("manifest serializes");
        bytes.push(b'\n');
        write_atomic(path, &bytes)?;
        Ok(self)
    }

    pub fn read(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| RunError::schema(path, e.to_string()))
    }

    /// Artifacts whose current digest no longer matches the record.
    pub fn stale(&self) -> Vec<String> {
        self.inputs
            .iter()
            .chain(&self.outputs)
            .filter(|a| {
                ArtifactDigest::of_file(Path::new(&a.path))
                    .map_or(true, |now| now.sha256 != a.sha256)
            })
            .map(|a| a.path.clone())
            .collect()
    }
}
