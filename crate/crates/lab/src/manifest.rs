//! Run manifest: written before any artifact and completed after the last one.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{LabError, LabResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub experiment: String,
    pub started_at: String,
    /// `None` while the run is in progress
    pub finished_at: Option<String>,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn is_complete(&self) -> bool {
        self.finished_at.is_some()
    }

    pub fn read(dir: &Path) -> LabResult<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).map_err(|_| LabError::MissingInput(p.display().to_string()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Output directory bound to an open manifest.
pub struct RunDir {
    dir: PathBuf,
    manifest: RunManifest,
}

impl RunDir {
    /// Creates the directory and writes the in-progress manifest.
    pub fn start(dir: &Path, cfg: &ExperimentConfig) -> LabResult<Self> {
        std::fs::create_dir_all(dir)?;
        let manifest = RunManifest {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: cfg.experiment().name().to_string(),
            started_at: now(),
            finished_at: None,
            files: Vec::new(),
        };
        let rd = Self { dir: dir.to_path_buf(), manifest };
        rd.flush()?;
        Ok(rd)
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    fn flush(&self) -> LabResult<()> {
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        std::fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    /// Writes one artifact and records it.
    pub fn write(&mut self, name: &str, contents: &str) -> LabResult<()> {
        std::fs::write(self.dir.join(name), contents)?;
        if !self.manifest.files.iter().any(|f| f == name) {
            self.manifest.files.push(name.to_string());
        }
        self.flush()
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> LabResult<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(name, &text)
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Checks every listed file exists and stamps the finish time.
    pub fn finish(mut self) -> LabResult<RunManifest> {
        for f in &self.manifest.files {
            if !self.dir.join(f).is_file() {
                return Err(LabError::MissingInput(f.clone()));
            }
        }
        self.manifest.finished_at = Some(now());
        self.flush()?;
        Ok(self.manifest)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
